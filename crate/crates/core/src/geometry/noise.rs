use serde::{Deserialize, Serialize};

use super::{tangent_basis, Mat3, SmoothField, Vec3};

/// Noise matrix `σ(x)` of the stochastic perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseMap {
    /// `s(x) (I - n nᵀ)` with `n = ∇F/|∇F|`; `s ≡ 1` when no scale field is given.
    TangentProjection {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<SmoothField>,
    },
    Constant {
        matrix: [[f64; 3]; 3],
    },
}

impl NoiseMap {
    pub fn tangent_projection() -> Self {
        NoiseMap::TangentProjection { scale: None }
    }

    pub fn scaled_projection(scale: SmoothField) -> Self {
        NoiseMap::TangentProjection { scale: Some(scale) }
    }

    pub fn sigma(&self, f: &SmoothField, x: &Vec3) -> Mat3 {
        match self {
            NoiseMap::TangentProjection { scale } => {
                let n = f.gradient(x).normalize();
                let p = Mat3::identity() - n * n.transpose();
                match scale {
                    Some(s) => p * s.value(x),
                    None => p,
                }
            }
            NoiseMap::Constant { matrix } => Mat3::from_fn(|i, j| matrix[i][j]),
        }
    }

    /// Derivative tensor: entry `k` holds the matrix `∂σ_ij/∂x_k`.
    pub fn derivative(&self, f: &SmoothField, x: &Vec3) -> [Mat3; 3] {
        match self {
            NoiseMap::TangentProjection { scale } => {
                let g = f.gradient(x);
                let gn = g.norm();
                let n = g / gn;
                let p = Mat3::identity() - n * n.transpose();
                // dn[i][k] = ∂n_i/∂x_k
                let dn = p * f.hessian(x) / gn;
                let (s, ds) = match scale {
                    Some(s) => (s.value(x), s.gradient(x)),
                    None => (1.0, Vec3::zeros()),
                };
                let mut out = [Mat3::zeros(); 3];
                for (k, m) in out.iter_mut().enumerate() {
                    let col = dn.column(k).into_owned();
                    let dnn = col * n.transpose() + n * col.transpose();
                    *m = p * ds[k] - dnn * s;
                }
                out
            }
            NoiseMap::Constant { .. } => [Mat3::zeros(); 3],
        }
    }

    /// `Σ_i = Σ_jk ∂σ_ij/∂x_k σ_kj`, the Stratonovich-to-Itô drift up to the factor `δ²/2`.
    pub fn ito_correction(&self, f: &SmoothField, x: &Vec3) -> Vec3 {
        let sigma = self.sigma(f, x);
        let d = self.derivative(f, x);
        let mut out = Vec3::zeros();
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                for (k, dk) in d.iter().enumerate() {
                    acc += dk[(i, j)] * sigma[(k, j)];
                }
            }
            out[i] = acc;
        }
        out
    }

    /// Smallest eigenvalue of `a = σσᵀ` restricted to the tangent plane of `{F = F(x)}`.
    pub fn tangent_ellipticity(&self, f: &SmoothField, x: &Vec3) -> f64 {
        let sigma = self.sigma(f, x);
        let a = sigma * sigma.transpose();
        let (e1, e2) = tangent_basis(&f.gradient(x));
        let m11 = e1.dot(&(a * e1));
        let m22 = e2.dot(&(a * e2));
        let m12 = e1.dot(&(a * e2));
        0.5 * (m11 + m22) - (0.25 * (m11 - m22).powi(2) + m12 * m12).sqrt()
    }
}
