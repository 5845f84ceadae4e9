use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RootedGraph, TorusSystem, Well};
use crate::error::{Error, Result};
use crate::flow::{integrate_unperturbed, stream_rng, Dynamics, IntegratorConfig, Sample, Stepper, Trajectory};
use crate::geometry::{NoiseMap, SmoothField, Vec3};
use crate::graphproc::{Branch, GraphPath, GraphState};
use crate::numerics::stats::chi_square;
use crate::surface::QuadratureOptions;

const TAU: f64 = std::f64::consts::TAU;

/// The root vertex of the torus graph.
pub const ROOT: GraphState = GraphState::Vertex { vertex: 0 };

/// Which conservative flow is sampled in the invariant-measure check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastFlow {
    /// `∇F × d`, invariant density `1/|∇F|`.
    Standard,
    /// `(∇F/|∇F|) × d`, invariant density 1.
    Normalized,
}

struct Normalized<'a>(&'a TorusSystem);

impl Dynamics for Normalized<'_> {
    fn potential(&self) -> &SmoothField {
        &self.0.f
    }
    fn level(&self) -> f64 {
        self.0.level
    }
    fn epsilon(&self) -> f64 {
        self.0.epsilon
    }
    fn delta(&self) -> f64 {
        self.0.delta
    }
    fn fast(&self, x: &Vec3) -> Vec3 {
        self.0.fast(x) / self.0.f.gradient(x).norm()
    }
    fn slow(&self, x: &Vec3) -> Vec3 {
        self.0.slow(x)
    }
    fn noise(&self) -> Option<&NoiseMap> {
        self.0.noise.as_ref()
    }
    fn observe(&self, x: &Vec3) -> f64 {
        self.0.observe(x)
    }
}

/// Time-averaged occupation of chart bins against the invariant measure of `ℰ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub flow: FastFlow,
    pub bins: (usize, usize),
    pub samples: usize,
    /// Observed counts, toroidal-major.
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub chi2: f64,
    pub p_value: f64,
    /// Largest `|observed - expected| / expected` over bins with expectation at least 5.
    pub max_relative_deviation: f64,
}

fn bin_of(sys: &TorusSystem, x: &Vec3, nu: usize, nv: usize) -> usize {
    let (u, v) = sys.angles(x);
    let i = ((u / TAU * nu as f64) as usize).min(nu - 1);
    let j = ((v / TAU * nv as f64) as usize).min(nv - 1);
    i * nv + j
}

/// Runs the conservative flow from `x0` for `t_end`, recording a sample every
/// `sample_every` time units, and compares bin occupation with `∬ w dm` over
/// each bin minus the wells (`w = 1/|∇F|` or 1).
#[allow(clippy::too_many_arguments)]
pub fn invariant_measure_check(
    sys: &TorusSystem,
    x0: &Vec3,
    t_end: f64,
    sample_every: f64,
    bins: (usize, usize),
    flow: FastFlow,
    cfg: &IntegratorConfig,
    quad: QuadratureOptions,
) -> Result<InvariantCheck> {
    let wells = sys.resolve_wells()?;
    if let Some(w) = sys.locate(&wells, x0) {
        return Err(Error::TrappedInWell { well: w.index });
    }
    let (nu, nv) = bins;
    let cfg = IntegratorConfig {
        record_every: (sample_every / cfg.step).round().max(1.0) as usize,
        ..cfg.clone()
    };
    let traj = match flow {
        FastFlow::Standard => integrate_unperturbed(sys, x0, t_end, &cfg)?,
        FastFlow::Normalized => integrate_unperturbed(&Normalized(sys), x0, t_end, &cfg)?,
    };
    let mut observed = vec![0.0; nu * nv];
    for s in &traj.samples[1..] {
        let x = Vec3::from(s.x);
        if let Some(w) = sys.locate(&wells, &x) {
            return Err(Error::TrappedInWell { well: w.index });
        }
        observed[bin_of(sys, &x, nu, nv)] += 1.0;
    }
    let n = traj.samples.len() - 1;
    let weight = |x: &Vec3| match flow {
        FastFlow::Standard => 1.0 / sys.f.gradient(x).norm(),
        FastFlow::Normalized => 1.0,
    };
    let mut mass = sys.with_atlas(|a| a.integrate_binned(&|_: &Vec3| -1.0, &|_: &Vec3| true, &weight, quad, nu, nv))?;
    for w in &wells {
        let inside = sys.with_atlas(|a| {
            a.integrate_binned(&|x: &Vec3| -w.depth(x), &|x: &Vec3| sys.contains(w, x), &weight, quad, nu, nv)
        })?;
        for (m, i) in mass.iter_mut().zip(inside) {
            *m -= i;
        }
    }
    let total: f64 = mass.iter().sum();
    let expected: Vec<f64> = mass.iter().map(|m| (m / total).max(0.0) * n as f64).collect();
    let (chi2, p_value) = chi_square(&observed, &expected, 0);
    let max_relative_deviation = observed
        .iter()
        .zip(&expected)
        .filter(|(_, e)| **e >= 5.0)
        .map(|(o, e)| (o - e).abs() / e)
        .fold(0.0, f64::max);
    Ok(InvariantCheck {
        flow,
        bins,
        samples: n,
        observed,
        expected,
        chi2,
        p_value,
        max_relative_deviation,
    })
}

fn exp_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).expect("positive rate").sample(rng)
}

fn choose_edge<R: Rng + ?Sized>(graph: &RootedGraph, rng: &mut R) -> usize {
    let total = graph.total_rate();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for e in &graph.edges {
        acc += e.rate;
        if u < acc {
            return e.well;
        }
    }
    graph.edges.iter().rev().find(|e| e.rate > 0.0).map(|e| e.well).unwrap()
}

/// Limit process on the rooted graph: exponential holding at the root, a
/// categorical jump into an edge, then the averaged flow `ẏ = a_k/T_k` with
/// RK4 steps `dt` until `t_end` or the return to the root.
pub fn simulate_torus_limit<R: Rng + ?Sized>(
    graph: &RootedGraph,
    start: GraphState,
    t_end: f64,
    dt: f64,
    rng: &mut R,
) -> Result<GraphPath> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let mut path = GraphPath::default();
    let mut t = 0.0;
    let mut state = start;
    if let GraphState::Edge { edge, g } = state {
        let e = graph.edge(edge)?;
        if !(g >= e.table.lo && g <= e.table.hi) {
            return Err(Error::EdgeRange { edge, g });
        }
    }
    path.points.push((t, state));
    while t < t_end {
        match state {
            GraphState::Vertex { .. } => {
                let rate = graph.kappa_hold * graph.total_rate();
                let hold = if rate > 0.0 { exp_sample(rate, rng) } else { f64::INFINITY };
                if t + hold >= t_end {
                    t = t_end;
                    path.points.push((t, ROOT));
                    break;
                }
                t += hold;
                let k = choose_edge(graph, rng);
                path.branches.push(Branch { t, vertex: 0, edge: k });
                state = GraphState::Edge { edge: k, g: 0.0 };
                path.points.push((t, ROOT));
            }
            GraphState::Edge { edge, g } => {
                let e = graph.edge(edge)?;
                let (lo, hi) = (e.table.lo, e.table.hi);
                let h = dt.min(t_end - t);
                let v = |y: f64| e.speed(y.clamp(lo, hi));
                let k1 = v(g);
                let k2 = v(g + 0.5 * h * k1);
                let k3 = v(g + 0.5 * h * k2);
                let k4 = v(g + h * k3);
                let y = (g + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0).clamp(lo, hi);
                t += h;
                let back = if e.maximum { y <= 0.0 && g > 0.0 } else { y >= 0.0 && g < 0.0 };
                state = if back { ROOT } else { GraphState::Edge { edge, g: y } };
                path.points.push((t, state));
            }
        }
    }
    Ok(path)
}

/// `n` independent root holding times with the chosen edge.
pub fn limit_holding_samples(graph: &RootedGraph, n: usize, seed: u64) -> Result<Vec<(f64, usize)>> {
    let rate = graph.kappa_hold * graph.total_rate();
    if !(rate > 0.0) {
        return Err(Error::Config("no well can be entered from the root".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let t = exp_sample(rate, &mut rng);
            (t, choose_edge(graph, &mut rng))
        })
        .collect())
}

/// First entry of the 3-D diffusion into a well at depth at least `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootExit {
    pub time: f64,
    /// `None` if `t_max` was reached first.
    pub well: Option<usize>,
}

/// Runs the SDE from `x0 ∈ ℰ` until it lies in some well at depth at least `eta`.
pub fn root_exit<R: Rng + ?Sized>(
    sys: &TorusSystem,
    wells: &[Well],
    x0: &Vec3,
    t_max: f64,
    eta: f64,
    cfg: &IntegratorConfig,
    rng: &mut R,
) -> Result<RootExit> {
    if let Some(w) = sys.locate(wells, x0) {
        return Err(Error::TrappedInWell { well: w.index });
    }
    let stepper = Stepper::new(sys, cfg);
    let mut x = *x0;
    let mut t = 0.0;
    while t < t_max {
        x = if sys.delta > 0.0 { stepper.step_sde(&x, rng)? } else { stepper.step(&x)? };
        t += stepper.dt;
        for w in wells {
            if w.depth(&x) >= eta && sys.contains(w, &x) {
                return Ok(RootExit {
                    time: t,
                    well: Some(w.index),
                });
            }
        }
    }
    Ok(RootExit { time: t, well: None })
}

/// Root exits of `n` independent runs, one random stream each, from `start`
/// or from a draw of the invariant measure of `ℰ`.
pub fn root_exits(
    sys: &TorusSystem,
    start: Option<Vec3>,
    n: usize,
    t_max: f64,
    eta: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<RootExit>> {
    let wells = sys.resolve_wells()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, i as u64);
            let x0 = match start {
                Some(x) => x,
                None => sys.sample_ergodic(&wells, &mut rng)?,
            };
            root_exit(sys, &wells, &x0, t_max, eta, cfg, &mut rng)
        })
        .collect()
}

/// The 3-D SDE with its projection onto the rooted graph.
pub fn simulate_torus_sde<R: Rng + ?Sized>(
    sys: &TorusSystem,
    x0: &Vec3,
    t_end: f64,
    cfg: &IntegratorConfig,
    rng: &mut R,
) -> Result<(Trajectory, GraphPath)> {
    let wells = sys.resolve_wells()?;
    let stepper = Stepper::new(sys, cfg);
    let project = |x: &Vec3| match sys.locate(&wells, x) {
        Some(w) => GraphState::Edge {
            edge: w.index,
            g: w.level(x),
        },
        None => ROOT,
    };
    let mut traj = Trajectory::default();
    let mut path = GraphPath::default();
    let mut x = *x0;
    let mut t = 0.0;
    let mut state = project(&x);
    traj.samples.push(Sample {
        t,
        x: x.into(),
        g: sys.observe(&x),
    });
    path.points.push((t, state));
    let n = (t_end / stepper.dt).ceil() as usize;
    let every = cfg.record_every.max(1);
    for i in 0..n {
        x = if sys.delta > 0.0 { stepper.step_sde(&x, rng)? } else { stepper.step(&x)? };
        t += stepper.dt;
        let next = project(&x);
        if let (GraphState::Vertex { .. }, GraphState::Edge { edge, .. }) = (state, next) {
            path.branches.push(Branch { t, vertex: 0, edge });
        }
        state = next;
        if (i + 1) % every == 0 || i + 1 == n {
            traj.samples.push(Sample {
                t,
                x: x.into(),
                g: sys.observe(&x),
            });
            path.points.push((t, state));
        }
    }
    Ok((traj, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::GridSpec;
    use crate::levelsets::TraceOptions;
    use crate::numerics::stats::{binomial_z, ks_exponential};
    use crate::torus::torus_rates;

    fn graph() -> RootedGraph {
        torus_rates(
            &TorusSystem::canonical(),
            GridSpec { uniform: 8, decades: 3 },
            &TraceOptions::default(),
            QuadratureOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn limit_holding_is_exponential_with_rate_proportions() {
        let g = graph();
        let s = limit_holding_samples(&g, 4000, 3).unwrap();
        let times: Vec<f64> = s.iter().map(|x| x.0).collect();
        let (_, p) = ks_exponential(&times, g.total_rate());
        assert!(p > 1e-3, "{p}");
        for (k, q) in g.branch_probabilities() {
            let c = s.iter().filter(|x| x.1 == k).count();
            assert!(binomial_z(c, s.len(), q).abs() < 4.0);
        }
    }

    #[test]
    fn limit_path_descends_into_a_dip() {
        let g = graph();
        let mut rng = stream_rng(5, 0);
        let path = simulate_torus_limit(&g, ROOT, 50.0 * g.holding_mean(), 1e-2, &mut rng).unwrap();
        assert_eq!(path.branches.len(), 1);
        let k = path.branches[0].edge;
        assert!(k == 1 || k == 2);
        let GraphState::Edge { edge, g: y } = path.last().1 else { panic!("still at the root") };
        assert_eq!(edge, k);
        let lo = g.edge(k).unwrap().table.lo;
        assert!(y < 0.5 * lo, "{y} {lo}");
        // a start inside the hill returns to the root
        let hill = g.edge(3).unwrap();
        let start = GraphState::Edge { edge: 3, g: 0.5 * hill.table.hi };
        let path = simulate_torus_limit(&g, start, 1e3, 1e-2, &mut rng).unwrap();
        assert!(path.points.iter().any(|p| p.1 == ROOT));
    }

    #[test]
    fn unperturbed_start_in_a_well_is_rejected() {
        let sys = TorusSystem::canonical();
        let wells = sys.resolve_wells().unwrap();
        let r = invariant_measure_check(
            &sys,
            &wells[0].extremum.x,
            1.0,
            0.1,
            (4, 4),
            FastFlow::Standard,
            &IntegratorConfig::default(),
            QuadratureOptions::default(),
        );
        assert!(matches!(r, Err(Error::TrappedInWell { well: 1 })));
    }

    #[test]
    fn without_entry_the_root_holds_for_the_horizon() {
        // anti-friction on two dips
        let dip = |u: f64, a: f64| super::super::Bump {
            toroidal: u,
            poloidal: 0.0,
            amplitude: a,
            width: 0.3,
        };
        let sys = TorusSystem::from_bumps(1.0, 0.5, &[dip(0.0, -0.3), dip(3.0, -0.2)], 0.05, 0.6, -6.0, 1e-3, 0.1).unwrap();
        let g = torus_rates(&sys, GridSpec { uniform: 4, decades: 1 }, &TraceOptions::default(), QuadratureOptions::default())
            .unwrap();
        assert!(g.edges.iter().all(|e| !e.entry));
        assert!(g.holding_mean().is_infinite());
        let mut rng = stream_rng(1, 0);
        let path = simulate_torus_limit(&g, ROOT, 1e6, 1e-2, &mut rng).unwrap();
        assert!(path.branches.is_empty());
        assert_eq!(*path.last(), (1e6, ROOT));
        assert!(limit_holding_samples(&g, 10, 0).is_err());
    }

    #[test]
    fn excursions_into_the_same_edge_take_the_same_time() {
        let g = graph();
        let mut durations = Vec::new();
        for seed in 0..4 {
            let mut rng = stream_rng(seed, 0);
            let start = GraphState::Edge { edge: 3, g: 0.5 * g.edge(3).unwrap().table.hi };
            let path = simulate_torus_limit(&g, start, 1e3, 1e-2, &mut rng).unwrap();
            let back = path.points.iter().find(|p| p.1 == ROOT).unwrap().0;
            durations.push(back);
        }
        assert!(durations.iter().all(|d| *d == durations[0] && d.is_finite()));
    }

    #[test]
    fn occupation_follows_the_invariant_density_only_for_irrational_tilt() {
        let sys = TorusSystem::canonical();
        let wells = sys.resolve_wells().unwrap();
        let x0 = sys.ergodic_point(&wells).unwrap();
        let cfg = IntegratorConfig::default().with_step(0.1);
        let q = QuadratureOptions::default();
        for flow in [FastFlow::Standard, FastFlow::Normalized] {
            let c = invariant_measure_check(&sys, &x0, 2e4, 2.0, (6, 6), flow, &cfg, q).unwrap();
            assert!(c.p_value > 0.01, "{flow:?} {} {}", c.chi2, c.p_value);
        }
        // a purely toroidal tilt leaves the orbits closed
        let closed = TorusSystem::from_bumps(
            1.0,
            0.5,
            &[super::super::Bump {
                toroidal: 0.0,
                poloidal: std::f64::consts::PI / 2.0,
                amplitude: -0.3,
                width: 0.3,
            }],
            0.05,
            0.0,
            6.0,
            1e-3,
            0.1,
        )
        .unwrap();
        let wells = closed.resolve_wells().unwrap();
        let x0 = closed.ergodic_point(&wells).unwrap();
        let c = invariant_measure_check(&closed, &x0, 2e4, 2.0, (6, 6), FastFlow::Standard, &cfg, q).unwrap();
        assert!(c.p_value < 1e-6, "{}", c.p_value);
    }

    #[test]
    fn sde_stays_on_the_tube_and_projects_to_the_graph() {
        let sys = TorusSystem::canonical();
        let wells = sys.resolve_wells().unwrap();
        let x0 = sys.ergodic_point(&wells).unwrap();
        let cfg = IntegratorConfig {
            record_every: 100,
            ..IntegratorConfig::stochastic()
        };
        let mut rng = stream_rng(2, 0);
        let (traj, path) = simulate_torus_sde(&sys, &x0, 2.0, &cfg, &mut rng).unwrap();
        for s in &traj.samples {
            assert!((sys.f.value(&Vec3::from(s.x)) - sys.level).abs() < 1e-6);
        }
        assert_eq!(traj.samples.len(), path.points.len());
        for (_, st) in &path.points {
            if let GraphState::Edge { edge, g } = st {
                let (lo, hi) = wells[edge - 1].range();
                assert!(*g >= lo && *g <= hi);
            }
        }
    }
}
