use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::averaging::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{NoiseMap, SmoothField, SurfaceSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Branching,
    Averaging,
    Ribbon,
    SdeBranching,
    Gluing,
    Metastability,
    Rotation,
    Torus,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Branching,
        ExperimentKind::Averaging,
        ExperimentKind::Ribbon,
        ExperimentKind::SdeBranching,
        ExperimentKind::Gluing,
        ExperimentKind::Metastability,
        ExperimentKind::Rotation,
        ExperimentKind::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Branching => "branching",
            ExperimentKind::Averaging => "averaging",
            ExperimentKind::Ribbon => "ribbon",
            ExperimentKind::SdeBranching => "sde-branching",
            ExperimentKind::Gluing => "gluing",
            ExperimentKind::Metastability => "metastability",
            ExperimentKind::Rotation => "rotation",
            ExperimentKind::Torus => "torus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

/// Which surface system an experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum SystemRef {
    SphereDoubleWell {
        #[serde(default)]
        asymmetry: f64,
    },
    SphereHeight,
    /// A serialized [`SurfaceSystem`], JSON or TOML by extension.
    File { path: PathBuf },
}

impl Default for SystemRef {
    fn default() -> Self {
        SystemRef::SphereDoubleWell { asymmetry: 0.1 }
    }
}

impl SystemRef {
    pub fn resolve(&self) -> Result<SurfaceSystem> {
        let sys = match self {
            SystemRef::SphereDoubleWell { asymmetry } => SurfaceSystem::sphere_double_well(*asymmetry),
            SystemRef::SphereHeight => SurfaceSystem::sphere_height(),
            SystemRef::File { path } => load_system(path)?,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Whether the system is mirror symmetric, so that both wells are equally likely.
    pub fn is_symmetric(&self) -> bool {
        matches!(self, SystemRef::SphereDoubleWell { asymmetry } if *asymmetry == 0.0)
    }
}

pub fn load_system(path: &Path) -> Result<SurfaceSystem> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        Ok(toml::from_str(&text)?)
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pass/fail thresholds of the statistical gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Number of standard errors allowed for fractions.
    pub sigma: f64,
    /// Relative tolerance for deterministic geometric comparisons.
    pub relative: f64,
    /// Relative agreement of the line-limit and surface routes.
    pub route_agreement: f64,
    pub hitting_time: f64,
    /// Largest allowed `sup |G(X) - ĝ|` at the smallest ε.
    pub averaging_sup: f64,
    /// Allowed deviation of fitted width exponents from 1.
    pub slope: f64,
    pub r_squared: f64,
    pub additivity: f64,
    /// Smallest relative change of a gluing weight under a change of noise.
    pub beta_change: f64,
    /// Fraction of runs required at the predicted well.
    pub concentration: f64,
    pub lambda_stability: f64,
    pub transition_exponent: f64,
    pub p_value: f64,
    pub holding_mean: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            relative: 0.05,
            route_agreement: 0.01,
            hitting_time: 0.02,
            averaging_sup: 0.02,
            slope: 0.1,
            r_squared: 0.95,
            additivity: 0.01,
            beta_change: 0.01,
            concentration: 0.9,
            lambda_stability: 0.01,
            transition_exponent: 0.15,
            p_value: 0.01,
            holding_mean: 0.25,
        }
    }
}

/// Kind-specific knobs; each experiment reads only its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    /// Fast-time integrator step.
    pub step: f64,
    /// Slow-time cap of a single run.
    pub t_max: f64,
    pub well_depth: f64,
    pub grid: GridSpec,
    /// Averaging: the comparison runs until `ĝ` is this far above the well bottom.
    pub bottom_margin: f64,
    /// Ribbon: scan points per ribbon pair.
    pub ribbon_resolution: usize,
    /// Ribbon: scan length in ribbon pairs.
    pub ribbon_periods: f64,
    /// Rotation: distances above the saddle level.
    pub rotation_levels: Vec<f64>,
    /// Rotation: distances above the saddle level regarded as far.
    pub far_levels: Vec<f64>,
    /// SDE branching: noise maps to compare; the first is the reference.
    pub noises: Vec<NoiseMap>,
    pub exit_delta: f64,
    pub exit_runs: usize,
    /// Exit band half-width as a multiple of `δ²`.
    pub exit_band: f64,
    /// Start and entry depth `max(1e-3, start_band δ²)` of the well-fraction runs.
    pub start_band: f64,
    /// Gluing: inner radii of the vertex neighborhood.
    pub vertex_radii: Vec<f64>,
    pub exit_radius: f64,
    /// Metastability: longest simulated horizon.
    pub horizon_cap: f64,
    pub delta_range: [f64; 2],
    pub transition_deltas: Vec<f64>,
    pub transition_runs: usize,
    pub transition_t_max: f64,
    /// Torus: invariant-measure check.
    pub invariant_t_end: f64,
    pub invariant_step: f64,
    pub invariant_bins: [usize; 2],
    pub holding_samples: usize,
    /// Torus: entry depth of the 3-D runs.
    pub entry_depth: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            t_max: 20.0,
            well_depth: 1e-3,
            grid: GridSpec { uniform: 16, decades: 5 },
            bottom_margin: 0.05,
            ribbon_resolution: 30,
            ribbon_periods: 2.5,
            rotation_levels: (0..9).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect(),
            far_levels: vec![0.1, 0.2, 0.4],
            noises: vec![NoiseMap::tangent_projection()],
            exit_delta: 0.2,
            exit_runs: 1000,
            exit_band: 0.125,
            start_band: 2.5,
            vertex_radii: vec![2.5e-3, 1.25e-3, 6.25e-4],
            exit_radius: 1e-2,
            horizon_cap: 1e3,
            delta_range: [0.12, 0.5],
            transition_deltas: vec![0.5, 0.4, 0.3],
            transition_runs: 400,
            transition_t_max: 1e6,
            invariant_t_end: 1e5,
            invariant_step: 0.1,
            invariant_bins: [6, 6],
            holding_samples: 5000,
            entry_depth: 0.02,
        }
    }
}

/// Noise `(1 + x₁/2)` times the tangent projection.
pub fn rescaled_projection() -> NoiseMap {
    NoiseMap::scaled_projection(SmoothField::polynomial(&[(1.0, [0, 0, 0]), (0.5, [1, 0, 0])]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub system: SystemRef,
    pub n_runs: usize,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub options: ExperimentOptions,
}

impl ExperimentConfig {
    /// Default parameters of each experiment on the asymmetric sphere.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut options = ExperimentOptions::default();
        let (n_runs, eps, delta) = match kind {
            ExperimentKind::Branching => (2000, vec![1e-3], vec![0.05]),
            ExperimentKind::Averaging => {
                options.t_max = 4.0;
                (1, vec![4e-3, 2e-3, 1e-3], vec![])
            }
            ExperimentKind::Ribbon => (1, vec![4e-3, 2e-3, 1e-3], vec![]),
            ExperimentKind::SdeBranching => {
                options.noises = vec![NoiseMap::tangent_projection(), rescaled_projection()];
                (600, vec![1e-4], vec![0.2, 0.1, 0.05])
            }
            ExperimentKind::Gluing => (10_000, vec![1e-3], vec![1.0]),
            ExperimentKind::Metastability => (400, vec![1e-3], vec![]),
            ExperimentKind::Rotation => {
                options.step = 0.01;
                (1, vec![1e-8, 5e-9], vec![])
            }
            ExperimentKind::Torus => {
                options.t_max = 50.0;
                (240, vec![1e-3], vec![0.1])
            }
        };
        Self {
            kind,
            system: SystemRef::default(),
            n_runs,
            eps,
            delta,
            seed: 2024,
            out: None,
            tolerances: Tolerances::default(),
            options,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.eps.is_empty() {
            return Err(Error::Config("eps list is empty".into()));
        }
        if self.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("eps values must be positive".into()));
        }
        if self.delta.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("delta values must be non-negative".into()));
        }
        let needs_delta = matches!(
            self.kind,
            ExperimentKind::Branching | ExperimentKind::SdeBranching | ExperimentKind::Gluing | ExperimentKind::Torus
        );
        if needs_delta && self.delta.is_empty() {
            return Err(Error::Config(format!("{} needs a nonempty delta list", self.kind.name())));
        }
        let ordered = matches!(self.kind, ExperimentKind::Ribbon | ExperimentKind::Averaging);
        if ordered && self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps list must be decreasing".into()));
        }
        if self.kind == ExperimentKind::SdeBranching && self.options.noises.is_empty() {
            return Err(Error::Config("at least one noise map is required".into()));
        }
        Ok(())
    }

    pub fn with_runs(mut self, n: usize) -> Self {
        self.n_runs = n;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip_through_toml() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg, "{}", kind.name());
            assert_eq!(ExperimentKind::parse(kind.name()).unwrap(), kind);
        }
    }

    #[test]
    fn minimal_toml_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "kind = \"branching\"\nn_runs = 10\neps = [1e-3]\ndelta = [0.05]\n\n[system]\npreset = \"sphere-double-well\"\nasymmetry = 0.0\n",
        )
        .unwrap();
        assert!(cfg.system.is_symmetric());
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.options.step, 0.05);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ExperimentConfig::preset(ExperimentKind::Ribbon);
        let mut c = base.clone();
        c.n_runs = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.eps = vec![1e-3, 2e-3];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.eps = vec![-1.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::preset(ExperimentKind::Gluing);
        c.delta.clear();
        assert!(c.validate().is_err());
        assert!(ExperimentKind::parse("nope").is_err());
    }
}
