use serde::{Deserialize, Serialize};

use super::{skew, NoiseMap, SmoothField, Vec3, VectorFieldSpec};
use crate::error::{Error, Result};

/// Slow perturbation of the conservative flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Perturbation {
    /// `∇F × (∇F × b)`
    Damping { b: VectorFieldSpec },
    /// `∇F × w`
    NormalCross { w: VectorFieldSpec },
}

impl Perturbation {
    pub fn friction() -> Self {
        Perturbation::Damping {
            b: VectorFieldSpec::Zero,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        match self {
            Perturbation::Damping { b } => Perturbation::Damping { b: b.scaled(c) },
            Perturbation::NormalCross { w } => Perturbation::NormalCross { w: w.scaled(c) },
        }
    }

    pub fn field(&self, f: &SmoothField, x: &Vec3) -> Vec3 {
        let gf = f.gradient(x);
        match self {
            Perturbation::Damping { b } => gf.cross(&gf.cross(&b.value(x))),
            Perturbation::NormalCross { w } => gf.cross(&w.value(x)),
        }
    }

    /// The vector `w` with perturbation `∇F × w`; its circulation along a level
    /// curve equals minus the averaged drift numerator.
    pub fn circulation_field(&self, f: &SmoothField, x: &Vec3) -> Vec3 {
        match self {
            Perturbation::Damping { b } => f.gradient(x).cross(&b.value(x)),
            Perturbation::NormalCross { w } => w.value(x),
        }
    }

    /// Curl of [`Self::circulation_field`].
    pub fn circulation_curl(&self, f: &SmoothField, x: &Vec3) -> Vec3 {
        match self {
            Perturbation::Damping { b } => {
                let gf = f.gradient(x);
                let hf = f.hessian(x);
                let bv = b.value(x);
                let jb = b.jacobian(x);
                gf * jb.trace() - bv * hf.trace() + hf * bv - jb * gf
            }
            Perturbation::NormalCross { w } => w.curl(x),
        }
    }

    pub fn is_damping(&self) -> bool {
        matches!(self, Perturbation::Damping { .. })
    }
}

/// How the working surface is parameterized for quadrature and seeding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfaceChart {
    /// Surface met exactly once by every ray from `center`.
    Star { center: [f64; 3] },
    /// Tube around the circle of radius `major_radius` in the x₁x₂ plane.
    Torus { major_radius: f64 },
}

impl Default for SurfaceChart {
    fn default() -> Self {
        SurfaceChart::Star { center: [0.0; 3] }
    }
}

/// A perturbed conservative system restricted to the level surface `{F = level}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSystem {
    pub f: SmoothField,
    pub g: SmoothField,
    pub perturbation: Perturbation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMap>,
    pub level: f64,
    pub base_point: Vec3,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    /// Level of `G` on the outer boundary of the working region.
    pub boundary_level: f64,
    #[serde(default)]
    pub chart: SurfaceChart,
}

/// Default distance between `G(x0)` and the boundary level.
pub const BOUNDARY_OFFSET: f64 = 1.0;

impl SurfaceSystem {
    /// Unit sphere, `G = x₃ - x₁² - βx₁ + 1`, friction `b = ∇G`, tangent-projection noise.
    pub fn sphere_double_well(asymmetry: f64) -> Self {
        let mut terms = vec![(1.0, [0, 0, 1]), (-1.0, [2, 0, 0]), (1.0, [0, 0, 0])];
        if asymmetry != 0.0 {
            terms.push((-asymmetry, [1, 0, 0]));
        }
        let g = SmoothField::polynomial(&terms);
        let base = Vec3::new(0.0, 3f64.sqrt() / 2.0, -0.5);
        let boundary = g.value(&base) + BOUNDARY_OFFSET;
        SurfaceSystem {
            f: SmoothField::half_norm_squared(),
            perturbation: Perturbation::Damping {
                b: VectorFieldSpec::gradient_of(g.clone()),
            },
            g,
            noise: Some(NoiseMap::tangent_projection()),
            level: 0.5,
            base_point: base,
            epsilon: 1e-3,
            delta: 0.0,
            boundary_level: boundary,
            chart: SurfaceChart::default(),
        }
    }

    /// Unit sphere with the height function `G = x₃`.
    pub fn sphere_height() -> Self {
        let g = SmoothField::polynomial(&[(1.0, [0, 0, 1])]);
        let base = Vec3::new(3f64.sqrt() / 2.0, 0.0, -0.5);
        SurfaceSystem {
            f: SmoothField::half_norm_squared(),
            perturbation: Perturbation::Damping {
                b: VectorFieldSpec::gradient_of(g.clone()),
            },
            g,
            noise: Some(NoiseMap::tangent_projection()),
            level: 0.5,
            base_point: base,
            epsilon: 1e-3,
            delta: 0.0,
            boundary_level: 0.5,
            chart: SurfaceChart::default(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_noise(mut self, noise: Option<NoiseMap>) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = p;
        self
    }

    pub fn base_level(&self) -> f64 {
        self.g.value(&self.base_point)
    }

    /// Checks the base point and the non-vanishing of `∇F` on a sample of the surface.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be non-negative, got {}", self.delta)));
        }
        let defect = (self.f.value(&self.base_point) - self.level).abs();
        if defect > 1e-10 {
            return Err(Error::Config(format!(
                "base point is off the level surface by {defect:e}"
            )));
        }
        let gb = self.base_level();
        if gb >= self.boundary_level {
            return Err(Error::Config(format!(
                "boundary level {} must exceed G(x0) = {gb}",
                self.boundary_level
            )));
        }
        for x in crate::surface::seed_points(self, 12)? {
            if self.f.gradient(&x).norm() < 1e-8 {
                return Err(Error::Config(format!("grad F vanishes near {x}")));
            }
        }
        Ok(())
    }

    /// Stable content hash of the system definition.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("system serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Jacobian of `∇F × ∇G`.
pub fn fast_field_jacobian(f: &SmoothField, g: &SmoothField, x: &Vec3) -> super::Mat3 {
    skew(&f.gradient(x)) * g.hessian(x) - skew(&g.gradient(x)) * f.hessian(x)
}
