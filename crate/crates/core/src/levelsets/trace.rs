use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SmoothField, Vec3};
use crate::numerics::ode::{hermite, Dopri5, Workspace};

/// A time-weighted integrand evaluated along an orbit.
pub type Integrand<'a> = &'a (dyn Fn(&Vec3) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest arclength step.
    pub max_step: f64,
    pub max_length: f64,
    /// Allowed drift of `H` before the corrector, per step.
    pub drift_tol: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: 0.02,
            max_length: 1e3,
            drift_tol: 1e-8,
        }
    }
}

/// A closed orbit of `ẋ = ∇F × ∇H` on `{F = z, H = level}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub level: f64,
    /// Polyline starting at the seed, in the direction of the flow.
    pub points: Vec<Vec3>,
    /// Flow time along the polyline, matching `points`.
    pub times: Vec<f64>,
    pub period: f64,
    pub length: f64,
    /// Distance between the seed and the interpolated return point.
    pub closure: f64,
    /// `∮ φ dt` for each requested integrand.
    pub integrals: Vec<f64>,
}

impl LevelCurve {
    pub fn seed(&self) -> &Vec3 {
        &self.points[0]
    }

    /// Shortest distance from `x` to the polyline.
    pub fn distance(&self, x: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.points.windows(2) {
            let d = w[1] - w[0];
            let l2 = d.norm_squared();
            let s = if l2 > 0.0 { ((x - w[0]).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
            best = best.min((w[0] + d * s - x).norm());
        }
        best
    }
}

/// Gauss–Newton projection onto `{F = z, H = level}`.
pub fn project_to_curve(f: &SmoothField, z: f64, h: &SmoothField, level: f64, x: &Vec3) -> Result<Vec3> {
    let mut y = *x;
    let mut res = f64::INFINITY;
    for _ in 0..30 {
        let r = Vector2::new(f.value(&y) - z, h.value(&y) - level);
        res = r.norm();
        if res < 1e-14 {
            return Ok(y);
        }
        let a = f.gradient(&y);
        let b = h.gradient(&y);
        let gram = Matrix2::new(a.dot(&a), a.dot(&b), a.dot(&b), b.dot(&b));
        let Some(c) = gram.lu().solve(&r) else { break };
        let step = a * c[0] + b * c[1];
        y -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    if res < 1e-10 {
        Ok(y)
    } else {
        Err(Error::ProjectionFailure {
            iterations: 30,
            residual: res,
        })
    }
}

fn flow_dir(f: &SmoothField, h: &SmoothField, x: &Vec3) -> Vec3 {
    f.gradient(x).cross(&h.gradient(x))
}

/// Traces the closed orbit through (the projection of) `seed` and integrates
/// `∮ φ dt` for each integrand, using adaptive arclength steps, a corrector
/// onto the curve after each step and a section-plane return test.
pub fn trace_level_curve(
    f: &SmoothField,
    z: f64,
    h: &SmoothField,
    level: f64,
    seed: &Vec3,
    integrands: &[Integrand],
    opts: &TraceOptions,
) -> Result<LevelCurve> {
    let escape = |arclength: f64, reason: &str| Error::CurveEscape {
        level,
        arclength,
        reason: reason.to_string(),
    };
    let x0 = project_to_curve(f, z, h, level, seed)?;
    let v0 = flow_dir(f, h, &x0);
    if v0.norm() < 1e-12 {
        return Err(escape(0.0, "seed is a critical point"));
    }
    let normal = v0.normalize();
    let m = integrands.len();
    let n = 4 + m;
    let mut rhs = |_s: f64, y: &[f64], dy: &mut [f64]| {
        let x = Vec3::new(y[0], y[1], y[2]);
        let v = flow_dir(f, h, &x);
        let speed = v.norm().max(1e-300);
        for i in 0..3 {
            dy[i] = v[i] / speed;
        }
        dy[3] = 1.0 / speed;
        for (j, phi) in integrands.iter().enumerate() {
            dy[4 + j] = phi(&x) / speed;
        }
    };
    let solver = Dopri5 {
        rtol: opts.rtol,
        atol: opts.atol,
        h_min: 1e-12,
        h_max: opts.max_step,
    };
    let mut ws = Workspace::new(n);
    let mut y = vec![0.0; n];
    y[..3].copy_from_slice(x0.as_slice());
    let mut dy = vec![0.0; n];
    rhs(0.0, &y, &mut dy);
    let mut s = 0.0;
    let mut step = opts.max_step / 4.0;
    let mut points = vec![x0];
    let mut times = vec![0.0];
    let sigma = |y: &[f64]| normal.dot(&(Vec3::new(y[0], y[1], y[2]) - x0));
    let mut sig_prev = 0.0;
    let mut reach = 0.0f64;
    while s < opts.max_length {
        let err = solver.attempt(&mut rhs, s, &y, &dy, step, &mut ws);
        let xn = Vec3::new(ws.y_new[0], ws.y_new[1], ws.y_new[2]);
        let drift = (h.value(&xn) - level).abs();
        if (err > 1.0 || drift > opts.drift_tol) && step > solver.h_min {
            step = if err > 1.0 { solver.next_step(step, err) } else { step * 0.5 };
            continue;
        }
        let xp = project_to_curve(f, z, h, level, &xn)?;
        let mut y_new = ws.y_new.clone();
        y_new[..3].copy_from_slice(xp.as_slice());
        let mut dy_new = vec![0.0; n];
        rhs(s + step, &y_new, &mut dy_new);
        if dy_new[3] > 1e12 {
            return Err(escape(s, "orbit runs into a critical point"));
        }
        let sig_new = sigma(&y_new);
        let dist = (xp - x0).norm();
        let prev_dist = (Vec3::new(y[0], y[1], y[2]) - x0).norm();
        reach = reach.max(dist);
        if sig_prev < 0.0 && sig_new >= 0.0 && reach > 4.0 * dist.max(prev_dist) {
            // locate the section crossing on the Hermite interpolant
            let at = |th: f64, i: usize| hermite(y[i], dy[i], y_new[i], dy_new[i], step, th);
            let sig_at = |th: f64| normal.dot(&(Vec3::new(at(th, 0), at(th, 1), at(th, 2)) - x0));
            let (mut lo, mut hi) = (0.0, 1.0);
            let (mut flo, mut fhi) = (sig_prev, sig_new);
            let mut th = 0.5;
            for _ in 0..80 {
                th = lo - flo * (hi - lo) / (fhi - flo);
                if !(th > lo + 1e-3 * (hi - lo) && th < hi - 1e-3 * (hi - lo)) {
                    th = 0.5 * (lo + hi);
                }
                let v = sig_at(th);
                if v.abs() < 1e-15 || hi - lo < 1e-15 {
                    break;
                }
                if v < 0.0 {
                    lo = th;
                    flo = v;
                } else {
                    hi = th;
                    fhi = v;
                }
            }
            let end = Vec3::new(at(th, 0), at(th, 1), at(th, 2));
            let closure = (end - x0).norm();
            if closure < 1e-4 * reach.min(1.0) {
                let period = at(th, 3);
                let integrals = (0..m).map(|j| at(th, 4 + j)).collect();
                points.push(x0);
                times.push(period);
                return Ok(LevelCurve {
                    level,
                    points,
                    times,
                    period,
                    length: s + th * step,
                    closure,
                    integrals,
                });
            }
        }
        s += step;
        y = y_new;
        dy = dy_new;
        sig_prev = sig_new;
        points.push(xp);
        times.push(y[3]);
        step = solver.next_step(step, err);
    }
    Err(escape(s, "no return to the seed within the arclength budget"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sphere() -> SmoothField {
        SmoothField::half_norm_squared()
    }

    #[test]
    fn height_circles_have_closed_form_period() {
        // G = x₃ on the unit sphere: circle of radius r, speed r, period 2π
        let g = SmoothField::polynomial(&[(1.0, [0, 0, 1])]);
        for level in [-0.9, -0.3, 0.0, 0.6] {
            let r = (1.0f64 - level * level).sqrt();
            let seed = Vec3::new(r, 0.0, level);
            let one = |_: &Vec3| 1.0;
            let c = trace_level_curve(&sphere(), 0.5, &g, level, &seed, &[&one], &TraceOptions::default()).unwrap();
            assert!((c.period - 2.0 * PI).abs() < 1e-8, "{}", c.period);
            assert!((c.integrals[0] - 2.0 * PI).abs() < 1e-8);
            assert!((c.length - 2.0 * PI * r).abs() < 1e-8);
            assert!(c.closure < 1e-8);
            for p in &c.points {
                assert!((p.norm() - 1.0).abs() < 1e-12 && (p[2] - level).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn functional_is_resolution_invariant() {
        let g = SmoothField::polynomial(&[(1.0, [0, 0, 1]), (-1.0, [2, 0, 0]), (1.0, [0, 0, 0])]);
        let phi = |x: &Vec3| x[0] * x[0] + x[2];
        let seed = Vec3::new(0.0, 0.8, -0.6);
        let level = g.value(&seed);
        let coarse = trace_level_curve(&sphere(), 0.5, &g, level, &seed, &[&phi], &TraceOptions::default()).unwrap();
        let fine_opts = TraceOptions {
            max_step: 0.01,
            ..TraceOptions::default()
        };
        let fine = trace_level_curve(&sphere(), 0.5, &g, level, &seed, &[&phi], &fine_opts).unwrap();
        assert!(fine.points.len() > coarse.points.len());
        assert!(((coarse.integrals[0] - fine.integrals[0]) / fine.integrals[0]).abs() < 1e-6);
        assert!(((coarse.period - fine.period) / fine.period).abs() < 1e-6);
    }

    #[test]
    fn projection_lands_on_both_levels() {
        let g = SmoothField::polynomial(&[(1.0, [0, 0, 1])]);
        let x = project_to_curve(&sphere(), 0.5, &g, 0.2, &Vec3::new(1.1, 0.3, 0.5)).unwrap();
        assert!((x.norm() - 1.0).abs() < 1e-12 && (x[2] - 0.2).abs() < 1e-12);
    }
}
