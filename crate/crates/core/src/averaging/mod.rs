//! Averaged coefficients along the edges of the level-set graph.

mod metastable;
mod saddle;
mod slow;
mod table;

pub use metastable::{lambda_integral, metastable_thresholds, DecisionRow, MetastableReport, Outcome};
pub use saddle::{branching_probabilities, gluing_weights, saddle_data, Branching, SaddleData, SADDLE_OFFSETS};
pub use slow::{solve_slow_ode, SlowPath, SlowSegment};
pub use table::{EdgeCoefficients, EdgeTable, GridSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SurfaceSystem, Vec3};
use crate::levelsets::{Integrand, ReebGraph, TraceOptions};
use crate::surface::{Atlas, QuadratureOptions};

/// Line functionals of one level curve, each `∮ φ dl / |∇F×∇G|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineCoefficients {
    pub edge: usize,
    pub g: f64,
    /// Period `T`.
    pub period: f64,
    /// Deterministic drift numerator, `∮ ∇G·(perturbation)`.
    pub a: f64,
    /// `∮ ∇G·Σ` (Itô correction term).
    pub a1: f64,
    /// `∮ Σ a_ij ∂²G/∂x_i∂x_j`.
    pub a2: f64,
    /// `∮ |(∇G)ᵀσ|²`.
    pub b: f64,
}

impl LineCoefficients {
    /// Drift of the averaged diffusion at noise level `delta`.
    pub fn drift(&self, delta: f64) -> f64 {
        (self.a + 0.5 * delta * delta * (self.a1 + self.a2)) / self.period
    }

    /// Variance rate `δ² B / T`.
    pub fn diffusion(&self, delta: f64) -> f64 {
        delta * delta * self.b / self.period
    }
}

fn check_interior(graph: &ReebGraph, k: usize, g: f64) -> Result<()> {
    let e = graph.try_edge(k)?;
    if !(g > e.lo && g <= e.hi) {
        return Err(Error::EdgeRange { edge: k, g });
    }
    Ok(())
}

pub(crate) fn drift_integrand(sys: &SurfaceSystem, x: &Vec3) -> f64 {
    sys.g.gradient(x).dot(&sys.perturbation.field(&sys.f, x))
}

pub(crate) fn noise_integrands(sys: &SurfaceSystem, x: &Vec3) -> [f64; 3] {
    let Some(noise) = &sys.noise else { return [0.0; 3] };
    let gg = sys.g.gradient(x);
    let sigma = noise.sigma(&sys.f, x);
    let a = sigma * sigma.transpose();
    let a1 = gg.dot(&noise.ito_correction(&sys.f, x));
    let a2 = (a * sys.g.hessian(x)).trace();
    let b = (sigma.transpose() * gg).norm_squared();
    [a1, a2, b]
}

/// All line functionals on the curve `(k, g)`.
pub fn line_coefficients(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    k: usize,
    g: f64,
    opts: &TraceOptions,
) -> Result<LineCoefficients> {
    check_interior(graph, k, g)?;
    let fa = |x: &Vec3| drift_integrand(sys, x);
    let f1 = |x: &Vec3| noise_integrands(sys, x)[0];
    let f2 = |x: &Vec3| noise_integrands(sys, x)[1];
    let fb = |x: &Vec3| noise_integrands(sys, x)[2];
    let integrands: Vec<Integrand> = if sys.noise.is_some() {
        vec![&fa, &f1, &f2, &fb]
    } else {
        vec![&fa]
    };
    let c = graph.trace(sys, k, g, &integrands, opts)?;
    let get = |i: usize| c.integrals.get(i).copied().unwrap_or(0.0);
    Ok(LineCoefficients {
        edge: k,
        g,
        period: c.period,
        a: get(0),
        a1: get(1),
        a2: get(2),
        b: get(3),
    })
}

/// Averaged deterministic drift `ġ` on edge `k` at level `g`, by the line-integral route.
pub fn drift_coefficient(sys: &SurfaceSystem, graph: &ReebGraph, k: usize, g: f64) -> Result<f64> {
    let c = line_coefficients(sys, graph, k, g, &TraceOptions::default())?;
    Ok(c.a / c.period)
}

/// `(A, A₁, A₂, B)` on the curve `(k, g)`.
pub fn noise_coefficients(sys: &SurfaceSystem, graph: &ReebGraph, k: usize, g: f64) -> Result<(f64, f64, f64, f64)> {
    if sys.noise.is_none() {
        return Err(Error::Missing("noise map"));
    }
    let c = line_coefficients(sys, graph, k, g, &TraceOptions::default())?;
    Ok((c.a, c.a1, c.a2, c.b))
}

/// `∬ ∇×w·n dm` over the part of the region cut off by the curve `(k, g)`
/// away from the boundary, where the perturbation is `∇F × w`.
pub fn region_flux(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    k: usize,
    g: f64,
    opts: QuadratureOptions,
) -> Result<f64> {
    let atlas = Atlas::of(sys);
    let integrand = |x: &Vec3| {
        let n = sys.f.gradient(x).normalize();
        sys.perturbation.circulation_curl(&sys.f, x).dot(&n)
    };
    let label = |y: &Vec3| graph.region_contains(sys, k, g, y);
    let lower = graph.inside_is_lower(k);
    let (_, lo, hi) = graph.inside_edges(k);
    let mut total = 0.0;
    // pieces of the inside below and above the cut level
    if lower || lo < g {
        total += atlas.integrate_region(|y| sys.g.value(y) - g, label, integrand, opts)?;
    }
    if !lower || hi > g {
        total += atlas.integrate_region(|y| g - sys.g.value(y), label, integrand, opts)?;
    }
    Ok(total)
}

/// Drift numerator on `(k, g)` by Stokes' theorem over the cut-off region.
pub fn stokes_drift_numerator(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    k: usize,
    g: f64,
    opts: QuadratureOptions,
) -> Result<f64> {
    check_interior(graph, k, g)?;
    let s = if graph.inside_is_lower(k) { 1.0 } else { -1.0 };
    Ok(-s * region_flux(sys, graph, k, g, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{NoiseMap, SmoothField};

    fn canonical(beta: f64) -> (SurfaceSystem, ReebGraph) {
        let sys = SurfaceSystem::sphere_double_well(beta);
        let graph = ReebGraph::build(&sys).unwrap();
        (sys, graph)
    }

    #[test]
    fn friction_drift_is_negative_and_mirror_symmetric() {
        let (sys, graph) = canonical(0.0);
        for g in [0.1, 0.5, 1.2] {
            assert!(drift_coefficient(&sys, &graph, 2, g).unwrap() < 0.0);
        }
        for g in [-0.2, -0.1, -0.01] {
            let d1 = drift_coefficient(&sys, &graph, 1, g).unwrap();
            let d3 = drift_coefficient(&sys, &graph, 3, g).unwrap();
            assert!(d1 < 0.0);
            assert!((d1 - d3).abs() < 1e-8 * d1.abs(), "{d1} {d3}");
        }
    }

    #[test]
    fn line_and_stokes_routes_agree_on_the_outer_edge() {
        let (sys, graph) = canonical(0.0);
        let c = line_coefficients(&sys, &graph, 2, 0.5, &TraceOptions::default()).unwrap();
        let s = stokes_drift_numerator(&sys, &graph, 2, 0.5, QuadratureOptions::default()).unwrap();
        assert!(((c.a - s) / c.a).abs() < 5e-3, "{} {}", c.a, s);
    }

    #[test]
    fn projection_noise_integrand_matches_tangential_gradient() {
        let (sys, _) = canonical(0.1);
        for x in crate::surface::seed_points(&sys, 4).unwrap() {
            let gg = sys.g.gradient(&x);
            let n = x.normalize();
            let direct = (gg - n * gg.dot(&n)).norm_squared();
            assert!((noise_integrands(&sys, &x)[2] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn friction_by_grad_g_on_the_unit_sphere_gives_a_equal_minus_b() {
        let (sys, graph) = canonical(0.1);
        let c = line_coefficients(&sys, &graph, 1, -0.2, &TraceOptions::default()).unwrap();
        assert!(c.b > 0.0);
        assert!((c.a + c.b).abs() < 1e-9 * c.b);
    }

    #[test]
    fn noise_terms_sum_to_laplace_beltrami_integral() {
        // on the unit sphere Δ_S G = tr(P H P) - 2 n·∇G for tangent-projection noise
        let (sys, graph) = canonical(0.0);
        let lb = |x: &Vec3| {
            let n = x.normalize();
            let p = crate::geometry::Mat3::identity() - n * n.transpose();
            (p * sys.g.hessian(x) * p).trace() - 2.0 * n.dot(&sys.g.gradient(x))
        };
        for (k, g) in [(2, 0.4), (1, -0.1)] {
            let c = line_coefficients(&sys, &graph, k, g, &TraceOptions::default()).unwrap();
            let curve = graph.trace(&sys, k, g, &[&lb], &TraceOptions::default()).unwrap();
            let want = curve.integrals[0];
            assert!(((c.a1 + c.a2 - want) / want).abs() < 5e-3, "{} {}", c.a1 + c.a2, want);
        }
    }

    #[test]
    fn missing_noise_is_reported() {
        let (sys, graph) = canonical(0.0);
        let sys = sys.with_noise(None);
        assert!(matches!(noise_coefficients(&sys, &graph, 2, 0.5), Err(Error::Missing(_))));
        let scaled = SurfaceSystem::sphere_double_well(0.0)
            .with_noise(Some(NoiseMap::scaled_projection(SmoothField::polynomial(&[(2.0, [0, 0, 0])]))));
        let (_, _, _, b4) = noise_coefficients(&scaled, &graph, 2, 0.5).unwrap();
        let (_, _, _, b1) = noise_coefficients(&SurfaceSystem::sphere_double_well(0.0), &graph, 2, 0.5).unwrap();
        assert!((b4 - 4.0 * b1).abs() < 1e-9 * b4);
    }

    #[test]
    fn out_of_range_level_is_rejected() {
        let (sys, graph) = canonical(0.0);
        assert!(matches!(drift_coefficient(&sys, &graph, 1, 0.3), Err(Error::EdgeRange { .. })));
    }
}
