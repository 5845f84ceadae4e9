use serde::{Deserialize, Serialize};

use super::{skew, Mat3, SmoothField, Vec3};

fn one() -> f64 {
    1.0
}

/// A vector field on R³ with its Jacobian `J[i][j] = ∂v_i/∂x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VectorFieldSpec {
    Zero,
    /// `scale * ∇field`
    Gradient {
        field: SmoothField,
        #[serde(default = "one")]
        scale: f64,
    },
    Constant {
        value: [f64; 3],
    },
    /// `matrix · x + offset`
    Linear {
        matrix: [[f64; 3]; 3],
        #[serde(default)]
        offset: [f64; 3],
    },
    /// `scale * ∇left × ∇right`
    CrossGradients {
        left: SmoothField,
        right: SmoothField,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * ∇field × vector`
    GradientCross {
        field: SmoothField,
        vector: Box<VectorFieldSpec>,
        #[serde(default = "one")]
        scale: f64,
    },
    Sum {
        terms: Vec<VectorFieldSpec>,
    },
}

impl VectorFieldSpec {
    pub fn gradient_of(field: SmoothField) -> Self {
        VectorFieldSpec::Gradient { field, scale: 1.0 }
    }

    /// Multiplies the field by `c`.
    pub fn scaled(self, c: f64) -> Self {
        match self {
            VectorFieldSpec::Zero => VectorFieldSpec::Zero,
            VectorFieldSpec::Gradient { field, scale } => VectorFieldSpec::Gradient {
                field,
                scale: scale * c,
            },
            VectorFieldSpec::Constant { value } => VectorFieldSpec::Constant {
                value: value.map(|v| v * c),
            },
            VectorFieldSpec::Linear { matrix, offset } => VectorFieldSpec::Linear {
                matrix: matrix.map(|row| row.map(|v| v * c)),
                offset: offset.map(|v| v * c),
            },
            VectorFieldSpec::CrossGradients { left, right, scale } => VectorFieldSpec::CrossGradients {
                left,
                right,
                scale: scale * c,
            },
            VectorFieldSpec::GradientCross { field, vector, scale } => VectorFieldSpec::GradientCross {
                field,
                vector,
                scale: scale * c,
            },
            VectorFieldSpec::Sum { terms } => VectorFieldSpec::Sum {
                terms: terms.into_iter().map(|t| t.scaled(c)).collect(),
            },
        }
    }

    pub fn value(&self, x: &Vec3) -> Vec3 {
        match self {
            VectorFieldSpec::Zero => Vec3::zeros(),
            VectorFieldSpec::Gradient { field, scale } => field.gradient(x) * *scale,
            VectorFieldSpec::Constant { value } => Vec3::from(*value),
            VectorFieldSpec::Linear { matrix, offset } => linear_matrix(matrix) * x + Vec3::from(*offset),
            VectorFieldSpec::CrossGradients { left, right, scale } => {
                left.gradient(x).cross(&right.gradient(x)) * *scale
            }
            VectorFieldSpec::GradientCross { field, vector, scale } => {
                field.gradient(x).cross(&vector.value(x)) * *scale
            }
            VectorFieldSpec::Sum { terms } => terms.iter().map(|t| t.value(x)).sum(),
        }
    }

    pub fn jacobian(&self, x: &Vec3) -> Mat3 {
        match self {
            VectorFieldSpec::Zero | VectorFieldSpec::Constant { .. } => Mat3::zeros(),
            VectorFieldSpec::Gradient { field, scale } => field.hessian(x) * *scale,
            VectorFieldSpec::Linear { matrix, .. } => linear_matrix(matrix),
            VectorFieldSpec::CrossGradients { left, right, scale } => {
                let (gl, gr) = (left.gradient(x), right.gradient(x));
                (skew(&gl) * right.hessian(x) - skew(&gr) * left.hessian(x)) * *scale
            }
            VectorFieldSpec::GradientCross { field, vector, scale } => {
                let gf = field.gradient(x);
                let v = vector.value(x);
                (skew(&gf) * vector.jacobian(x) - skew(&v) * field.hessian(x)) * *scale
            }
            VectorFieldSpec::Sum { terms } => terms.iter().map(|t| t.jacobian(x)).sum(),
        }
    }

    pub fn curl(&self, x: &Vec3) -> Vec3 {
        curl_from_jacobian(&self.jacobian(x))
    }
}

fn linear_matrix(m: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    )
}

pub fn curl_from_jacobian(j: &Mat3) -> Vec3 {
    Vec3::new(j[(2, 1)] - j[(1, 2)], j[(0, 2)] - j[(2, 0)], j[(1, 0)] - j[(0, 1)])
}
