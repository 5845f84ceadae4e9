use serde::{Deserialize, Serialize};

use super::expr::Expression;
use super::{Mat3, Vec3};

/// Step for centered first differences of expression fields.
pub const FD_STEP: f64 = 1e-5;
/// Step for the second differences of expression fields.
pub const FD_STEP_HESSIAN: f64 = 1e-4;

/// One term `coef * x^a * y^b * z^c` of a polynomial field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [u32; 3],
}

impl Monomial {
    pub fn new(coef: f64, powers: [u32; 3]) -> Self {
        Self { coef, powers }
    }
}

/// A scalar field on R³ with value, gradient and Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmoothField {
    Constant {
        value: f64,
    },
    Polynomial {
        terms: Vec<Monomial>,
    },
    /// `amplitude * exp(-|x - center|² / width²)`
    Gaussian {
        center: [f64; 3],
        amplitude: f64,
        width: f64,
    },
    /// `(sqrt(x² + y²) - R)² + z²`
    TorusTube {
        major_radius: f64,
    },
    /// Angle around the x₃ axis, continuous away from the half-plane opposite `reference`.
    ToroidalAngle {
        #[serde(default)]
        reference: f64,
    },
    /// Angle around the core circle of radius `major_radius` in the meridian plane.
    PoloidalAngle {
        major_radius: f64,
        #[serde(default)]
        reference: f64,
    },
    Sum {
        terms: Vec<SmoothField>,
    },
    Scaled {
        factor: f64,
        field: Box<SmoothField>,
    },
    /// User expression; derivatives by centered finite differences.
    Expression {
        expr: Expression,
    },
}

/// Wraps `a` into `(reference - π, reference + π]`.
pub fn wrap_angle(a: f64, reference: f64) -> f64 {
    use std::f64::consts::PI;
    let mut d = (a - reference) % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    reference + d
}

fn powi(x: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(n as i32),
    }
}

// value, first and second derivative of t^n
fn pow_derivs(t: f64, n: u32) -> (f64, f64, f64) {
    let v = powi(t, n);
    let d1 = if n >= 1 { n as f64 * powi(t, n - 1) } else { 0.0 };
    let d2 = if n >= 2 {
        (n * (n - 1)) as f64 * powi(t, n - 2)
    } else {
        0.0
    };
    (v, d1, d2)
}

impl SmoothField {
    pub fn polynomial(terms: &[(f64, [u32; 3])]) -> Self {
        SmoothField::Polynomial {
            terms: terms.iter().map(|&(c, p)| Monomial::new(c, p)).collect(),
        }
    }

    pub fn expression(src: &str) -> crate::Result<Self> {
        Ok(SmoothField::Expression {
            expr: Expression::parse(src)?,
        })
    }

    pub fn scaled(self, factor: f64) -> Self {
        SmoothField::Scaled {
            factor,
            field: Box::new(self),
        }
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        match self {
            SmoothField::Constant { value } => *value,
            SmoothField::Polynomial { terms } => terms
                .iter()
                .map(|m| {
                    m.coef * powi(x[0], m.powers[0]) * powi(x[1], m.powers[1]) * powi(x[2], m.powers[2])
                })
                .sum(),
            SmoothField::Gaussian {
                center,
                amplitude,
                width,
            } => {
                let d = x - Vec3::from(*center);
                amplitude * (-d.norm_squared() / (width * width)).exp()
            }
            SmoothField::TorusTube { major_radius } => {
                let rho = x[0].hypot(x[1]);
                (rho - major_radius).powi(2) + x[2] * x[2]
            }
            SmoothField::ToroidalAngle { reference } => wrap_angle(x[1].atan2(x[0]), *reference),
            SmoothField::PoloidalAngle {
                major_radius,
                reference,
            } => {
                let rho = x[0].hypot(x[1]);
                wrap_angle(x[2].atan2(rho - major_radius), *reference)
            }
            SmoothField::Sum { terms } => terms.iter().map(|t| t.value(x)).sum(),
            SmoothField::Scaled { factor, field } => factor * field.value(x),
            SmoothField::Expression { expr } => expr.eval(&[x[0], x[1], x[2]]),
        }
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match self {
            SmoothField::Constant { .. } => Vec3::zeros(),
            SmoothField::Polynomial { terms } => {
                let mut g = Vec3::zeros();
                for m in terms {
                    let (a0, d0, _) = pow_derivs(x[0], m.powers[0]);
                    let (a1, d1, _) = pow_derivs(x[1], m.powers[1]);
                    let (a2, d2, _) = pow_derivs(x[2], m.powers[2]);
                    g[0] += m.coef * d0 * a1 * a2;
                    g[1] += m.coef * a0 * d1 * a2;
                    g[2] += m.coef * a0 * a1 * d2;
                }
                g
            }
            SmoothField::Gaussian {
                center,
                amplitude,
                width,
            } => {
                let d = x - Vec3::from(*center);
                let w2 = width * width;
                let v = amplitude * (-d.norm_squared() / w2).exp();
                d * (-2.0 * v / w2)
            }
            SmoothField::TorusTube { major_radius } => {
                let rho = x[0].hypot(x[1]);
                let s = 2.0 * (rho - major_radius) / rho;
                Vec3::new(s * x[0], s * x[1], 2.0 * x[2])
            }
            SmoothField::ToroidalAngle { .. } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                Vec3::new(-x[1] / r2, x[0] / r2, 0.0)
            }
            SmoothField::PoloidalAngle { major_radius, .. } => {
                let rho = x[0].hypot(x[1]);
                let u = rho - major_radius;
                let q = u * u + x[2] * x[2];
                let du = Vec3::new(x[0] / rho, x[1] / rho, 0.0);
                (Vec3::z() * u - du * x[2]) / q
            }
            SmoothField::Sum { terms } => terms.iter().map(|t| t.gradient(x)).sum(),
            SmoothField::Scaled { factor, field } => field.gradient(x) * *factor,
            SmoothField::Expression { expr } => fd_gradient(|p| expr.eval(&[p[0], p[1], p[2]]), x, FD_STEP),
        }
    }

    pub fn hessian(&self, x: &Vec3) -> Mat3 {
        match self {
            SmoothField::Constant { .. } => Mat3::zeros(),
            SmoothField::Polynomial { terms } => {
                let mut h = Mat3::zeros();
                for m in terms {
                    let (a0, d0, s0) = pow_derivs(x[0], m.powers[0]);
                    let (a1, d1, s1) = pow_derivs(x[1], m.powers[1]);
                    let (a2, d2, s2) = pow_derivs(x[2], m.powers[2]);
                    let c = m.coef;
                    h[(0, 0)] += c * s0 * a1 * a2;
                    h[(1, 1)] += c * a0 * s1 * a2;
                    h[(2, 2)] += c * a0 * a1 * s2;
                    let h01 = c * d0 * d1 * a2;
                    let h02 = c * d0 * a1 * d2;
                    let h12 = c * a0 * d1 * d2;
                    h[(0, 1)] += h01;
                    h[(1, 0)] += h01;
                    h[(0, 2)] += h02;
                    h[(2, 0)] += h02;
                    h[(1, 2)] += h12;
                    h[(2, 1)] += h12;
                }
                h
            }
            SmoothField::Gaussian {
                center,
                amplitude,
                width,
            } => {
                let d = x - Vec3::from(*center);
                let w2 = width * width;
                let v = amplitude * (-d.norm_squared() / w2).exp();
                (d * d.transpose() * (4.0 / (w2 * w2)) - Mat3::identity() * (2.0 / w2)) * v
            }
            SmoothField::TorusTube { major_radius } => {
                let rho = x[0].hypot(x[1]);
                let drho = Vec3::new(x[0] / rho, x[1] / rho, 0.0);
                let mut h = drho * drho.transpose() * 2.0 + rho_hessian(x, rho) * (2.0 * (rho - major_radius));
                h[(2, 2)] += 2.0;
                h
            }
            SmoothField::ToroidalAngle { .. } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let r4 = r2 * r2;
                let a = 2.0 * x[0] * x[1] / r4;
                let b = (x[1] * x[1] - x[0] * x[0]) / r4;
                Mat3::new(a, b, 0.0, b, -a, 0.0, 0.0, 0.0, 0.0)
            }
            SmoothField::PoloidalAngle { major_radius, .. } => {
                let rho = x[0].hypot(x[1]);
                let u = rho - major_radius;
                let w = x[2];
                let q = u * u + w * w;
                let du = Vec3::new(x[0] / rho, x[1] / rho, 0.0);
                let dw = Vec3::z();
                let hu = rho_hessian(x, rho);
                // grad = (u dw - w du) / q
                let num = dw * u - du * w;
                let dq = du * (2.0 * u) + dw * (2.0 * w);
                let dnum = dw * du.transpose() - du * dw.transpose() - hu * w;
                dnum / q - num * dq.transpose() / (q * q)
            }
            SmoothField::Sum { terms } => terms.iter().map(|t| t.hessian(x)).sum(),
            SmoothField::Scaled { factor, field } => field.hessian(x) * *factor,
            SmoothField::Expression { expr } => {
                let f = |p: &Vec3| expr.eval(&[p[0], p[1], p[2]]);
                let mut h = Mat3::zeros();
                let s = FD_STEP_HESSIAN;
                for j in 0..3 {
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[j] += s;
                    xm[j] -= s;
                    let col = (fd_gradient(f, &xp, s) - fd_gradient(f, &xm, s)) / (2.0 * s);
                    h.set_column(j, &col);
                }
                (h + h.transpose()) * 0.5
            }
        }
    }

    /// Builds `|x|²/2`.
    pub fn half_norm_squared() -> Self {
        Self::polynomial(&[(0.5, [2, 0, 0]), (0.5, [0, 2, 0]), (0.5, [0, 0, 2])])
    }
}

fn rho_hessian(x: &Vec3, rho: f64) -> Mat3 {
    let r3 = rho * rho * rho;
    Mat3::new(
        x[1] * x[1] / r3,
        -x[0] * x[1] / r3,
        0.0,
        -x[0] * x[1] / r3,
        x[0] * x[0] / r3,
        0.0,
        0.0,
        0.0,
        0.0,
    )
}

/// Centered first differences.
pub fn fd_gradient<F: Fn(&Vec3) -> f64>(f: F, x: &Vec3, step: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for i in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += step;
        xm[i] -= step;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * step);
    }
    g
}
