//! Slow-fast motion on a torus whose fast flow `∇F × d` has a closed,
//! non-exact field `d`: an ergodic component `ℰ` and a few wells, glued
//! into a graph with one root vertex.

mod rates;
mod sim;

pub use rates::{entry_flag, invariant_masses, torus_rates, EdgeRates, InvariantMasses, RootedGraph};
pub use sim::{
    invariant_measure_check, limit_holding_samples, root_exit, root_exits, simulate_torus_limit, simulate_torus_sde,
    FastFlow, InvariantCheck, RootExit, ROOT,
};

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{project_to_level, Dynamics};
use crate::geometry::{wrap_angle, NoiseMap, SmoothField, SurfaceChart, Vec3, VectorFieldSpec};
use crate::levelsets::{refine_critical_point, CriticalKind, CriticalPoint};
use crate::surface::Atlas;

/// Number of points used to test that a well is reached along a chart segment.
const SEGMENT_SAMPLES: usize = 32;

/// Gaussian bump of `G` centered at the chart point `(toroidal, poloidal)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub toroidal: f64,
    pub poloidal: f64,
    pub amplitude: f64,
    pub width: f64,
}

/// A well: its local first integral `H_k` (with `∇H_k = d`) and starting
/// guesses for the extremum `M_k` and the saddle `A_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub h: SmoothField,
    pub extremum: [f64; 3],
    pub saddle: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusSystem {
    /// `(ρ - R)² + x₃²` with `R = major_radius`.
    pub f: SmoothField,
    pub major_radius: f64,
    pub level: f64,
    /// Closed field of the fast flow `∇F × d`.
    pub d: VectorFieldSpec,
    /// The slow perturbation is `∇F × p`.
    pub p: VectorFieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMap>,
    pub wells: Vec<WellSpec>,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
}

/// A resolved well with refined critical points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Well {
    /// Edge index, starting at 1.
    pub index: usize,
    pub h: SmoothField,
    pub extremum: CriticalPoint,
    pub saddle: CriticalPoint,
    pub maximum: bool,
    /// Chart angles of the extremum.
    pub center: (f64, f64),
}

impl Well {
    /// `H_k(x) - H_k(A_k)`, the coordinate along the edge.
    pub fn level(&self, x: &Vec3) -> f64 {
        self.h.value(x) - self.saddle.g
    }

    /// Positive inside the well.
    pub fn depth(&self, x: &Vec3) -> f64 {
        if self.maximum {
            self.level(x)
        } else {
            -self.level(x)
        }
    }

    /// Depth of the level curve at edge coordinate `y`.
    pub fn depth_of(&self, y: f64) -> f64 {
        if self.maximum {
            y
        } else {
            -y
        }
    }

    /// Edge coordinate at the extremum.
    pub fn extremum_level(&self) -> f64 {
        self.extremum.g - self.saddle.g
    }

    /// Closed range of the edge coordinate, lower end first.
    pub fn range(&self) -> (f64, f64) {
        let e = self.extremum_level();
        if self.maximum {
            (0.0, e)
        } else {
            (e, 0.0)
        }
    }
}

fn golden() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

impl TorusSystem {
    /// Tube of radius 1/2 around the unit circle, two dips and one hill, an
    /// irrational tilt `κ(∇ϑ + α∇φ)` and the friction-like `p = c ∇F × d`.
    pub fn canonical() -> Self {
        let bumps = [
            Bump {
                toroidal: 0.0,
                poloidal: PI / 2.0,
                amplitude: -0.3,
                width: 0.3,
            },
            Bump {
                toroidal: TAU / 3.0,
                poloidal: 0.0,
                amplitude: -0.2,
                width: 0.3,
            },
            Bump {
                toroidal: 2.0 * TAU / 3.0,
                poloidal: -PI / 2.0,
                amplitude: 0.25,
                width: 0.3,
            },
        ];
        Self::from_bumps(1.0, 0.5, &bumps, 0.05, golden(), 6.0, 1e-3, 0.1).expect("canonical torus is well formed")
    }

    /// `G = Σ bumps`, `d = ∇G + κ(∇ϑ + α∇φ)`, `p = c ∇F × d`, tangent-projection noise.
    #[allow(clippy::too_many_arguments)]
    pub fn from_bumps(
        major_radius: f64,
        minor_radius: f64,
        bumps: &[Bump],
        kappa: f64,
        alpha: f64,
        friction: f64,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self> {
        if !(minor_radius > 0.0 && minor_radius < major_radius) {
            return Err(Error::Config("tube radius must lie in (0, R)".into()));
        }
        let f = SmoothField::TorusTube { major_radius };
        let level = minor_radius * minor_radius;
        let point = |u: f64, v: f64| tube_point(major_radius, minor_radius, u, v);
        let gaussians: Vec<SmoothField> = bumps
            .iter()
            .map(|b| SmoothField::Gaussian {
                center: point(b.toroidal, b.poloidal).into(),
                amplitude: b.amplitude,
                width: b.width,
            })
            .collect();
        let g = SmoothField::Sum { terms: gaussians.clone() };
        let d = VectorFieldSpec::Sum {
            terms: vec![
                VectorFieldSpec::gradient_of(g.clone()),
                VectorFieldSpec::Gradient {
                    field: SmoothField::ToroidalAngle { reference: 0.0 },
                    scale: kappa,
                },
                VectorFieldSpec::Gradient {
                    field: SmoothField::PoloidalAngle {
                        major_radius,
                        reference: 0.0,
                    },
                    scale: kappa * alpha,
                },
            ],
        };
        let p = VectorFieldSpec::GradientCross {
            field: f.clone(),
            vector: Box::new(d.clone()),
            scale: friction,
        };
        let mut sys = Self {
            f,
            major_radius,
            level,
            d,
            p,
            noise: Some(NoiseMap::tangent_projection()),
            wells: Vec::new(),
            epsilon,
            delta,
        };
        for b in bumps {
            let h = SmoothField::Sum {
                terms: vec![
                    g.clone(),
                    SmoothField::ToroidalAngle { reference: b.toroidal }.scaled(kappa),
                    SmoothField::PoloidalAngle {
                        major_radius,
                        reference: b.poloidal,
                    }
                    .scaled(kappa * alpha),
                ],
            };
            let m = point(b.toroidal, b.poloidal);
            let a = sys.saddle_guess(&h, &m, b.amplitude > 0.0, b.width)?;
            sys.wells.push(WellSpec {
                h,
                extremum: m.into(),
                saddle: a.into(),
            });
        }
        Ok(sys)
    }

    /// Walks from `m` against (dip) or along (hill) the tilt and returns the
    /// point where `H` stops rising (dip) or falling (hill).
    fn saddle_guess(&self, h: &SmoothField, m: &Vec3, hill: bool, width: f64) -> Result<Vec3> {
        let n = self.f.gradient(m).normalize();
        let tilt = match h {
            SmoothField::Sum { terms } => terms[1..].iter().map(|t| t.gradient(m)).sum(),
            _ => Vec3::zeros(),
        };
        let mut dir = tilt - n * tilt.dot(&n);
        if dir.norm() < 1e-14 {
            return Err(Error::Config("tilt vanishes at a well center".into()));
        }
        dir = dir.normalize();
        if !hill {
            dir = -dir;
        }
        let steps = 400;
        let ds = 4.0 * width / steps as f64;
        let mut prev = h.value(m);
        let mut rising = None;
        let mut x_prev = *m;
        for i in 1..=steps {
            let x = project_to_level(&self.f, self.level, &(m + dir * (ds * i as f64)), 1e-12, 50)?;
            let v = h.value(&x);
            let up = v > prev;
            // a ridge for a dip, a pass for a hill
            if rising == Some(!hill) && up == hill {
                return Ok(x_prev);
            }
            rising = Some(up);
            prev = v;
            x_prev = x;
        }
        Err(Error::Config("no saddle found along the tilt direction".into()))
    }

    /// `(R, r)` of the tube.
    pub fn tube(&self) -> Result<(f64, f64)> {
        match self.f {
            SmoothField::TorusTube { major_radius } if self.level > 0.0 => Ok((major_radius, self.level.sqrt())),
            _ => Err(Error::Config("torus potential must be a tube".into())),
        }
    }

    pub fn point_at(&self, u: f64, v: f64) -> Result<Vec3> {
        let (big, small) = self.tube()?;
        Ok(tube_point(big, small, u, v))
    }

    /// Toroidal and poloidal angles of `x`, each in `[0, 2π)`.
    pub fn angles(&self, x: &Vec3) -> (f64, f64) {
        let u = x[1].atan2(x[0]).rem_euclid(TAU);
        let rho = x[0].hypot(x[1]);
        let v = x[2].atan2(rho - self.major_radius).rem_euclid(TAU);
        (u, v)
    }

    pub fn chart(&self) -> SurfaceChart {
        SurfaceChart::Torus {
            major_radius: self.major_radius,
        }
    }

    /// Runs `f` with an atlas of the tube.
    pub fn with_atlas<T>(&self, f: impl FnOnce(&Atlas) -> T) -> T {
        let chart = self.chart();
        let atlas = Atlas {
            f: &self.f,
            level: self.level,
            chart: &chart,
        };
        f(&atlas)
    }

    /// Refines the configured critical points of every well.
    pub fn resolve_wells(&self) -> Result<Vec<Well>> {
        if self.wells.is_empty() {
            return Err(Error::Config("no wells configured".into()));
        }
        self.tube()?;
        let mut out = Vec::new();
        for (i, w) in self.wells.iter().enumerate() {
            let m = refine_critical_point(&self.f, &w.h, self.level, &Vec3::from(w.extremum))?;
            let a = refine_critical_point(&self.f, &w.h, self.level, &Vec3::from(w.saddle))?;
            if m.kind == CriticalKind::Saddle || a.kind != CriticalKind::Saddle {
                return Err(Error::Config(format!("well {} guesses converge to the wrong critical points", i + 1)));
            }
            for x in [m.x, a.x] {
                let defect = (w.h.gradient(&x) - self.d.value(&x)).norm();
                if defect > 1e-8 {
                    return Err(Error::Config(format!("well {} first integral does not match d ({defect:e})", i + 1)));
                }
            }
            out.push(Well {
                index: i + 1,
                h: w.h.clone(),
                maximum: m.kind == CriticalKind::Maximum,
                center: self.angles(&m.x),
                extremum: m,
                saddle: a,
            });
        }
        Ok(out)
    }

    /// Whether `x` lies in the open well: positive depth along the whole chart
    /// segment from the extremum to `x`.
    pub fn contains(&self, well: &Well, x: &Vec3) -> bool {
        if well.depth(x) <= 0.0 {
            return false;
        }
        let (u, v) = self.angles(x);
        let du = wrap_angle(u - well.center.0, 0.0);
        let dv = wrap_angle(v - well.center.1, 0.0);
        if du.abs() > PI / 2.0 || dv.abs() > PI / 2.0 {
            return false;
        }
        let Ok((big, small)) = self.tube() else { return false };
        let depth = |s: f64| well.depth(&tube_point(big, small, well.center.0 + s * du, well.center.1 + s * dv));
        let mut lowest = (f64::INFINITY, 0usize);
        for i in 1..SEGMENT_SAMPLES {
            let d = depth(i as f64 / SEGMENT_SAMPLES as f64);
            if d <= 0.0 {
                return false;
            }
            if d < lowest.0 {
                lowest = (d, i);
            }
        }
        // the segment may graze the saddle between samples
        let n = SEGMENT_SAMPLES as f64;
        let (mut a, mut b) = ((lowest.1 as f64 - 1.0) / n, ((lowest.1 as f64 + 1.0) / n).min(1.0));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut e) = (b - r * (b - a), a + r * (b - a));
        let (mut fc, mut fe) = (depth(c), depth(e));
        for _ in 0..40 {
            if fc.min(fe) <= 0.0 {
                return false;
            }
            if fc < fe {
                b = e;
                e = c;
                fe = fc;
                c = b - r * (b - a);
                fc = depth(c);
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + r * (b - a);
                fe = depth(e);
            }
        }
        fc.min(fe) > 0.0
    }

    /// The well containing `x`, if any.
    pub fn locate<'w>(&self, wells: &'w [Well], x: &Vec3) -> Option<&'w Well> {
        wells.iter().find(|w| self.contains(w, x))
    }

    /// Largest `|∇ × d|` over an `n × n` chart grid.
    pub fn curl_defect(&self, n: usize) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let x = self.point_at(TAU * (i as f64 + 0.5) / n as f64, TAU * (j as f64 + 0.5) / n as f64)?;
                worst = worst.max(self.d.curl(&x).norm());
            }
        }
        Ok(worst)
    }

    /// A point of `ℰ`: the first chart grid point outside every well.
    pub fn ergodic_point(&self, wells: &[Well]) -> Result<Vec3> {
        for i in 0..16 {
            for j in 0..16 {
                let x = self.point_at(TAU * (i as f64 + 0.25) / 16.0, TAU * (j as f64 + 0.25) / 16.0)?;
                if self.locate(wells, &x).is_none() && wells.iter().all(|w| w.depth(&x) < -0.05) {
                    return Ok(x);
                }
            }
        }
        Err(Error::Config("no point outside the wells".into()))
    }

    /// Draws a point of `ℰ` from the normalized invariant density `1/|∇F|` on the tube.
    pub fn sample_ergodic<R: Rng + ?Sized>(&self, wells: &[Well], rng: &mut R) -> Result<Vec3> {
        let (big, small) = self.tube()?;
        for _ in 0..100_000 {
            let u = rng.random::<f64>() * TAU;
            let v = rng.random::<f64>() * TAU;
            // area element r (R + r cos v); |∇F| = 2r is constant
            if rng.random::<f64>() * (big + small) > big + small * v.cos() {
                continue;
            }
            let x = tube_point(big, small, u, v);
            if self.locate(wells, &x).is_none() {
                return Ok(x);
            }
        }
        Err(Error::Config("wells cover the torus".into()))
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_d(mut self, d: VectorFieldSpec) -> Self {
        self.d = d;
        self
    }
}

fn tube_point(big: f64, small: f64, u: f64, v: f64) -> Vec3 {
    let rho = big + small * v.cos();
    Vec3::new(rho * u.cos(), rho * u.sin(), small * v.sin())
}

impl Dynamics for TorusSystem {
    fn potential(&self) -> &SmoothField {
        &self.f
    }
    fn level(&self) -> f64 {
        self.level
    }
    fn epsilon(&self) -> f64 {
        self.epsilon
    }
    fn delta(&self) -> f64 {
        self.delta
    }
    fn fast(&self, x: &Vec3) -> Vec3 {
        self.f.gradient(x).cross(&self.d.value(x))
    }
    fn slow(&self, x: &Vec3) -> Vec3 {
        self.f.gradient(x).cross(&self.p.value(x))
    }
    fn noise(&self) -> Option<&NoiseMap> {
        self.noise.as_ref()
    }
    fn observe(&self, x: &Vec3) -> f64 {
        self.angles(x).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_wells_resolve_with_the_expected_kinds() {
        let sys = TorusSystem::canonical();
        let wells = sys.resolve_wells().unwrap();
        assert_eq!(wells.len(), 3);
        assert!(!wells[0].maximum && !wells[1].maximum && wells[2].maximum);
        for w in &wells {
            assert!(w.depth(&w.extremum.x) > 0.05, "{:?}", w.range());
            assert!(sys.contains(w, &w.extremum.x));
            assert!(!sys.contains(w, &w.saddle.x));
            let (lo, hi) = w.range();
            assert!(lo < hi);
        }
        assert!(sys.curl_defect(24).unwrap() < 1e-8);
        let x = sys.ergodic_point(&wells).unwrap();
        assert!((sys.f.value(&x) - sys.level).abs() < 1e-12);
    }

    #[test]
    fn angles_invert_the_tube_map() {
        let sys = TorusSystem::canonical();
        for (u, v) in [(0.3, 1.2), (5.0, 4.0), (3.0, 0.1)] {
            let (a, b) = sys.angles(&sys.point_at(u, v).unwrap());
            assert!((a - u).abs() < 1e-12 && (b - v).abs() < 1e-12);
        }
    }
}
