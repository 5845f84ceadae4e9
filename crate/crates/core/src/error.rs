use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("projection onto the level surface did not converge after {iterations} iterations (residual {residual:e})")]
    ProjectionFailure { iterations: usize, residual: f64 },

    #[error("fast-time step {step} exceeds the resolution bound {bound} (shortest period {period})")]
    StepResolution { step: f64, bound: f64, period: f64 },

    #[error("rejection sampler acceptance rate {rate:e} fell below 1e-4")]
    RejectionOverflow { rate: f64 },

    #[error("degenerate critical point near {x:?}: tangential Hessian eigenvalue {eigenvalue:e}")]
    DegenerateCriticalPoint { x: [f64; 3], eigenvalue: f64 },

    #[error("curve tracing escaped at level {level} after arclength {arclength}: {reason}")]
    CurveEscape { level: f64, arclength: f64, reason: String },

    #[error("point lies within {margin:e} of the separatrix level {level}")]
    AmbiguousSeparatrix { level: f64, margin: f64 },

    #[error("critical values {a} and {b} coincide within 1e-9")]
    NonGenericLevels { a: f64, b: f64 },

    #[error("level {g} is outside the range of edge {edge}")]
    EdgeRange { edge: usize, g: f64 },

    #[error("extrapolation toward the separatrix did not stabilize: {0}")]
    ExtrapolationDivergence(String),

    #[error("perturbation is not friction-like: flux {value:e} through region of edge {edge} is not positive")]
    SignViolation { edge: usize, value: f64 },

    #[error("slow drift stalled at g={g} on edge {edge}")]
    Stall { edge: usize, g: f64 },

    #[error("integrand A/B is not integrable at g={endpoint} (local exponent {exponent:.3})")]
    DivergentIntegral { endpoint: f64, exponent: f64 },

    #[error("time step {dt:e} crosses edge {edge} in a single step")]
    StepTooLarge { dt: f64, edge: usize },

    #[error("trajectory fell into well {well}")]
    TrappedInWell { well: usize },

    #[error("loop flux of well {well} is {value:e}, below tolerance")]
    VanishingPsi { well: usize, value: f64 },

    #[error("the system has no saddle inside the working region")]
    NoSaddle,

    #[error("missing input: {0}")]
    Missing(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
