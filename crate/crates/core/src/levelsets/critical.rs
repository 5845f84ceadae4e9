use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tangent_basis, SmoothField, SurfaceSystem, Vec3};
use crate::surface::Atlas;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
}

/// Critical point of `G` restricted to `{F = z}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub x: Vec3,
    pub g: f64,
    pub kind: CriticalKind,
    /// Lagrange multiplier `μ` with `∇G = μ ∇F`.
    pub multiplier: f64,
    /// Eigenvalues of the tangential Hessian, ascending.
    pub eigenvalues: [f64; 2],
    /// Matching unit eigenvectors in R³.
    pub axes: [Vec3; 2],
    /// Angular frequency of the linearized fast flow (extrema only).
    pub frequency: f64,
}

impl CriticalPoint {
    /// Period of small orbits around an extremum.
    pub fn linear_period(&self) -> Option<f64> {
        (self.kind != CriticalKind::Saddle).then(|| std::f64::consts::TAU / self.frequency)
    }

    /// Perturbed-flow stability for a friction-like perturbation.
    pub fn friction_stable(&self) -> bool {
        self.kind == CriticalKind::Minimum
    }
}

/// Norm of `∇G - (∇G·n) n`.
pub fn tangential_gradient(sys: &SurfaceSystem, x: &Vec3) -> Vec3 {
    let n = sys.f.gradient(x).normalize();
    let g = sys.g.gradient(x);
    g - n * g.dot(&n)
}

fn newton(f: &SmoothField, g: &SmoothField, level: f64, x0: &Vec3) -> Option<(Vec3, f64)> {
    let mut x = *x0;
    let gf = f.gradient(&x);
    let mut mu = g.gradient(&x).dot(&gf) / gf.norm_squared();
    let residual = |x: &Vec3, mu: f64| -> Vector4<f64> {
        let r = g.gradient(x) - f.gradient(x) * mu;
        Vector4::new(r[0], r[1], r[2], f.value(x) - level)
    };
    let mut r = residual(&x, mu);
    for _ in 0..60 {
        if r.norm() < 1e-13 {
            return Some((x, mu));
        }
        let gf = f.gradient(&x);
        let l = g.hessian(&x) - f.hessian(&x) * mu;
        let mut j = Matrix4::zeros();
        for a in 0..3 {
            for b in 0..3 {
                j[(a, b)] = l[(a, b)];
            }
            j[(a, 3)] = -gf[a];
            j[(3, a)] = gf[a];
        }
        let step = j.lu().solve(&(-r))?;
        let mut dx = Vec3::new(step[0], step[1], step[2]);
        let mut dmu = step[3];
        let scale = dx.norm() / 0.2;
        if scale > 1.0 {
            dx /= scale;
            dmu /= scale;
        }
        let mut t = 1.0;
        loop {
            let xn = x + dx * t;
            let rn = residual(&xn, mu + dmu * t);
            if rn.norm() < r.norm() || t < 1e-3 {
                x = xn;
                mu += dmu * t;
                r = rn;
                break;
            }
            t *= 0.5;
        }
    }
    (r.norm() < 1e-11).then_some((x, mu))
}

fn classify(f: &SmoothField, g: &SmoothField, x: Vec3, mu: f64) -> Result<CriticalPoint> {
    let gf = f.gradient(&x);
    let (e1, e2) = tangent_basis(&gf);
    let l = g.hessian(&x) - f.hessian(&x) * mu;
    let m11 = e1.dot(&(l * e1));
    let m22 = e2.dot(&(l * e2));
    let m12 = e1.dot(&(l * e2));
    let mean = 0.5 * (m11 + m22);
    let rad = (0.25 * (m11 - m22).powi(2) + m12 * m12).sqrt();
    let (lo, hi) = (mean - rad, mean + rad);
    for ev in [lo, hi] {
        if ev.abs() < 1e-6 {
            return Err(Error::DegenerateCriticalPoint {
                x: [x[0], x[1], x[2]],
                eigenvalue: ev,
            });
        }
    }
    let axis = |lam: f64| -> Vec3 {
        // (M - λ) v = 0 in the (e1, e2) basis
        let (a, b) = if m12.abs() > 1e-14 {
            (m12, lam - m11)
        } else if (m11 - lam).abs() < (m22 - lam).abs() {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        (e1 * a + e2 * b).normalize()
    };
    let mut axes = [axis(lo), axis(hi)];
    for a in axes.iter_mut() {
        let i = a.iamax();
        if a[i] < 0.0 {
            *a = -*a;
        }
    }
    let kind = if lo > 0.0 {
        CriticalKind::Minimum
    } else if hi < 0.0 {
        CriticalKind::Maximum
    } else {
        CriticalKind::Saddle
    };
    let frequency = if kind == CriticalKind::Saddle {
        0.0
    } else {
        gf.norm() * (lo * hi).sqrt()
    };
    Ok(CriticalPoint {
        x,
        g: g.value(&x),
        kind,
        multiplier: mu,
        eigenvalues: [lo, hi],
        axes,
        frequency,
    })
}

/// Critical point of `g` on `{f = level}` reached by Newton iteration from `x0`.
pub fn refine_critical_point(f: &SmoothField, g: &SmoothField, level: f64, x0: &Vec3) -> Result<CriticalPoint> {
    let (x, mu) = newton(f, g, level, x0).ok_or_else(|| Error::Config(format!("no critical point found near {x0:?}")))?;
    classify(f, g, x, mu)
}

/// All critical points of `G` on the charted surface, by multistart Newton
/// on the Lagrange system `∇G = μ∇F, F = z`; sorted by `G`.
pub fn find_critical_points(sys: &SurfaceSystem) -> Result<Vec<CriticalPoint>> {
    let seeds = Atlas::of(sys).seed_points(10)?;
    let mut found: Vec<(Vec3, f64)> = Vec::new();
    for s in seeds {
        if let Some((x, mu)) = newton(&sys.f, &sys.g, sys.level, &s) {
            if !found.iter().any(|(y, _)| (y - x).norm() < 1e-6) {
                found.push((x, mu));
            }
        }
    }
    let mut out = found
        .into_iter()
        .map(|(x, mu)| classify(&sys.f, &sys.g, x, mu))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.g.partial_cmp(&b.g).unwrap());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_critical_set() {
        let sys = SurfaceSystem::sphere_double_well(0.0);
        let cps = find_critical_points(&sys).unwrap();
        let kinds: Vec<_> = cps.iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            [
                CriticalKind::Minimum,
                CriticalKind::Minimum,
                CriticalKind::Saddle,
                CriticalKind::Maximum
            ]
        );
        let s3 = 3f64.sqrt() / 2.0;
        for c in &cps[..2] {
            assert!((c.g + 0.25).abs() < 1e-12);
            assert!((c.x[0].abs() - s3).abs() < 1e-9 && c.x[1].abs() < 1e-9 && (c.x[2] + 0.5).abs() < 1e-9);
            assert!(c.friction_stable());
        }
        assert!((cps[2].x - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9 && cps[2].g.abs() < 1e-12);
        assert!((cps[3].x - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-9 && (cps[3].g - 2.0).abs() < 1e-12);
        for c in &cps {
            assert!(tangential_gradient(&sys, &c.x).norm() < 1e-9);
        }
        // unstable direction of the saddle is the x₁ axis
        assert!((cps[2].axes[0] - Vec3::x()).norm() < 1e-9);
    }

    #[test]
    fn asymmetric_split_and_morse_count() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let cps = find_critical_points(&sys).unwrap();
        let count = |k| cps.iter().filter(|c| c.kind == k).count() as i64;
        assert_eq!(count(CriticalKind::Minimum), 2);
        assert_eq!(count(CriticalKind::Saddle), 1);
        assert_eq!(count(CriticalKind::Maximum), 1);
        assert_eq!(count(CriticalKind::Minimum) - count(CriticalKind::Saddle) + count(CriticalKind::Maximum), 2);
        assert!((cps[0].g - cps[1].g).abs() > 0.1);
        // deeper well sits at x₁ > 0
        assert!(cps[0].x[0] > 0.0);
    }

    #[test]
    fn height_function_has_two_critical_points() {
        let sys = SurfaceSystem::sphere_height();
        let cps = find_critical_points(&sys).unwrap();
        assert_eq!(cps.len(), 2);
        assert_eq!(cps[0].kind, CriticalKind::Minimum);
        assert_eq!(cps[1].kind, CriticalKind::Maximum);
    }
}
