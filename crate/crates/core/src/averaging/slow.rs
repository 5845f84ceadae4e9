use serde::{Deserialize, Serialize};

use super::table::{EdgeCoefficients, EdgeTable};
use crate::error::{Error, Result};
use crate::levelsets::{ReebGraph, VertexKind};
use crate::numerics::quad::{gauss_legendre, integrate};
use crate::numerics::Pchip;

/// Averaged motion along one edge: `g` as a decreasing function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowSegment {
    pub edge: usize,
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    /// Exponential approach to an extremum after the last sample: `(g_end, rate)`.
    pub tail: Option<(f64, f64)>,
}

impl SlowSegment {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        match self.tail {
            Some(_) => f64::INFINITY,
            None => *self.times.last().unwrap(),
        }
    }

    fn at(&self, t: f64) -> f64 {
        let t_last = *self.times.last().unwrap();
        if t > t_last {
            if let Some((g_end, rate)) = self.tail {
                let g_last = *self.levels.last().unwrap();
                return g_end + (g_last - g_end) * (-rate * (t - t_last)).exp();
            }
            return *self.levels.last().unwrap();
        }
        if self.times.len() < 2 {
            return self.levels[0];
        }
        // g(t) is monotone; interpolate the inverse of the tabulated t(g)
        let neg: Vec<f64> = self.levels.iter().map(|g| -g).collect();
        -Pchip::new(self.times.clone(), neg).eval(t)
    }
}

/// Solution `ĝ_t` of the averaged equation `ġ = A/T`, piecewise over edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowPath {
    pub segments: Vec<SlowSegment>,
    /// Time at which the path reaches the saddle, if it does.
    pub tau0: Option<f64>,
    pub t_end: f64,
}

impl SlowPath {
    /// Edge and level at time `t`.
    pub fn at(&self, t: f64) -> (usize, f64) {
        for s in &self.segments {
            if t <= s.t_end() {
                return (s.edge, s.at(t.max(s.t_start())));
            }
        }
        let s = self.segments.last().unwrap();
        (s.edge, s.at(t))
    }

    /// Samples `(t, edge, g)` on a uniform time grid.
    pub fn sample(&self, n: usize) -> Vec<(f64, usize, f64)> {
        (0..=n)
            .map(|i| {
                let t = self.t_end * i as f64 / n as f64;
                let (k, g) = self.at(t);
                (t, k, g)
            })
            .collect()
    }
}

/// Time to descend from `g0` to each of `targets` (decreasing) on one edge.
fn descent_times(table: &EdgeTable, g0: f64, targets: &[f64]) -> Result<Vec<f64>> {
    let rule = gauss_legendre(8);
    let speed = |g: f64| {
        let c = table.at(g);
        c.a / c.period
    };
    let mut out = Vec::with_capacity(targets.len());
    let mut acc = 0.0;
    let mut prev = g0;
    for &g in targets {
        // split at grid nodes so each panel sees a smooth interpolant
        let mut breaks: Vec<f64> = table.grid().iter().copied().filter(|&x| x < prev && x > g).collect();
        breaks.push(prev);
        breaks.push(g);
        breaks.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for w in breaks.windows(2) {
            for s in 0..4 {
                let hi = w[0] + (w[1] - w[0]) * s as f64 / 4.0;
                let lo = w[0] + (w[1] - w[0]) * (s + 1) as f64 / 4.0;
                acc += integrate(|x| 1.0 / -speed(x), lo, hi, &rule);
            }
        }
        out.push(acc);
        prev = g;
    }
    Ok(out)
}

fn segment(table: &EdgeTable, g0: f64, t0: f64, t_end: f64, to_extremum: bool) -> Result<SlowSegment> {
    for r in table.rows() {
        if r.g < g0 && r.g > table.lo && r.a >= 0.0 {
            return Err(Error::Stall { edge: table.edge, g: r.g });
        }
    }
    let mut targets: Vec<f64> = Vec::new();
    let mut nodes: Vec<f64> = table.grid().iter().copied().filter(|&x| x < g0 && x > table.lo).rev().collect();
    // four samples per grid panel
    let mut prev = g0;
    for x in nodes.drain(..) {
        for s in 1..=4 {
            targets.push(prev + (x - prev) * s as f64 / 4.0);
        }
        prev = x;
    }
    if !to_extremum {
        targets.push(table.lo);
    }
    let ts = descent_times(table, g0, &targets)?;
    let mut times = vec![t0];
    let mut levels = vec![g0];
    for (t, g) in ts.into_iter().zip(targets) {
        times.push(t0 + t);
        levels.push(g);
        if t0 + t > t_end {
            break;
        }
    }
    // drop repeated times from vanishing panels
    let mut i = 1;
    while i < times.len() {
        if times[i] <= times[i - 1] {
            times.remove(i);
            levels.remove(i);
        } else {
            i += 1;
        }
    }
    let tail = if to_extremum {
        let c = table.at(table.lo);
        let g1 = *levels.last().unwrap();
        let c1 = table.at(g1);
        let slope = (c1.a - c.a) / (g1 - table.lo);
        Some((table.lo, -slope / c.period))
    } else {
        None
    };
    Ok(SlowSegment {
        edge: table.edge,
        times,
        levels,
        tail,
    })
}

/// Integrates `ġ = A/T` from `start` until `t_end`, passing through saddles.
/// When the path reaches a saddle with several lower edges it continues into `well`.
pub fn solve_slow_ode(
    coeffs: &EdgeCoefficients,
    graph: &ReebGraph,
    start: (usize, f64),
    t_end: f64,
    well: Option<usize>,
) -> Result<SlowPath> {
    let (mut k, mut g) = start;
    let e = graph.try_edge(k)?;
    if !(g > e.lo && g <= e.hi) {
        return Err(Error::EdgeRange { edge: k, g });
    }
    let mut t = 0.0;
    let mut segments = Vec::new();
    let mut tau0 = None;
    loop {
        let table = coeffs.try_table(k)?;
        let e = graph.edge(k);
        let lower = &graph.vertices[e.lower];
        let to_extremum = matches!(lower.kind, VertexKind::Minimum);
        let seg = segment(table, g, t, t_end, to_extremum)?;
        let seg_end = seg.t_end();
        segments.push(seg);
        if to_extremum || seg_end >= t_end {
            break;
        }
        if lower.kind != VertexKind::Saddle {
            return Err(Error::Stall { edge: k, g: e.lo });
        }
        tau0.get_or_insert(seg_end);
        let below: Vec<usize> = graph.incident(e.lower).into_iter().filter(|(_, up)| !up).map(|(id, _)| id).collect();
        k = if below.len() == 1 {
            below[0]
        } else {
            match well {
                Some(w) if below.contains(&w) => w,
                Some(w) => return Err(Error::Config(format!("edge {w} does not leave the saddle downward"))),
                None => return Err(Error::Missing("well choice at the saddle")),
            }
        };
        g = e.lo;
        t = seg_end;
    }
    Ok(SlowPath { segments, tau0, t_end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::GridSpec;
    use crate::geometry::SurfaceSystem;
    use crate::levelsets::TraceOptions;

    fn setup(sys: &SurfaceSystem) -> (ReebGraph, EdgeCoefficients) {
        let graph = ReebGraph::build(sys).unwrap();
        let c = EdgeCoefficients::tabulate(sys, &graph, GridSpec::default(), &TraceOptions::default()).unwrap();
        (graph, c)
    }

    #[test]
    fn symmetric_branches_coincide_and_approach_the_minimum() {
        let sys = SurfaceSystem::sphere_double_well(0.0);
        let (graph, c) = setup(&sys);
        let g0 = sys.base_level();
        let p1 = solve_slow_ode(&c, &graph, (2, g0), 40.0, Some(1)).unwrap();
        let p3 = solve_slow_ode(&c, &graph, (2, g0), 40.0, Some(3)).unwrap();
        let tau0 = p1.tau0.unwrap();
        assert!(tau0.is_finite() && tau0 > 0.0);
        for i in 0..=200 {
            let t = 40.0 * i as f64 / 200.0;
            let (a, b) = (p1.at(t), p3.at(t));
            assert!((a.1 - b.1).abs() < 1e-12);
            if t > tau0 + 1e-9 {
                assert_eq!((a.0, b.0), (1, 3));
            }
        }
        // monotone approach to the minimum
        let mut prev = f64::INFINITY;
        for t in [tau0 + 0.5, tau0 + 1.0, tau0 + 5.0, tau0 + 20.0, 1e3] {
            let g = p1.at(t).1;
            assert!(g <= prev && g >= -0.25, "{t} {g} {prev}");
            prev = g;
        }
        assert!(p1.at(tau0 + 0.5).1 > p1.at(tau0 + 1.0).1);
        assert!(p1.at(1e3).1 + 0.25 < 1e-6);
    }

    #[test]
    fn scaling_the_perturbation_rescales_time() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let (graph, c) = setup(&sys);
        let fast = sys.clone().with_perturbation(sys.perturbation.clone().scaled(2.0));
        let c2 = EdgeCoefficients::tabulate(&fast, &graph, GridSpec::default(), &TraceOptions::default()).unwrap();
        let g0 = sys.base_level();
        let t1 = solve_slow_ode(&c, &graph, (2, g0), 100.0, Some(1)).unwrap().tau0.unwrap();
        let t2 = solve_slow_ode(&c2, &graph, (2, g0), 100.0, Some(1)).unwrap().tau0.unwrap();
        assert!((t1 / t2 - 2.0).abs() < 1e-9, "{t1} {t2}");
        // drift numerators scale linearly
        for (r1, r2) in c.table(2).rows().iter().zip(c2.table(2).rows()) {
            assert!((r2.a - 2.0 * r1.a).abs() < 1e-9 * r2.a.abs().max(1e-12));
        }
    }

    #[test]
    fn well_choice_is_required_at_the_saddle() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let (graph, c) = setup(&sys);
        let r = solve_slow_ode(&c, &graph, (2, sys.base_level()), 100.0, None);
        assert!(matches!(r, Err(Error::Missing(_))));
        let anti = sys.clone().with_perturbation(sys.perturbation.clone().scaled(-1.0));
        let ca = EdgeCoefficients::tabulate(&anti, &graph, GridSpec { uniform: 6, decades: 2 }, &TraceOptions::default()).unwrap();
        let r = solve_slow_ode(&ca, &graph, (2, sys.base_level()), 100.0, Some(1));
        assert!(matches!(r, Err(Error::Stall { .. })));
    }
}
