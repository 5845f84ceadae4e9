//! Limiting processes on the level-set graph: the deterministic flow with
//! random branching, the graph diffusion with vertex gluing, and first-passage statistics.

mod star;

pub use star::{bvp_exit_probabilities, exit_study, ExitStudy, StarEdge, StarGraph};

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{solve_slow_ode, EdgeCoefficients, SaddleData};
use crate::error::{Error, Result};
use crate::flow::stream_rng;
use crate::levelsets::{ReebGraph, VertexKind};
use crate::numerics::stats::mean_se;

/// Position on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GraphState {
    Edge { edge: usize, g: f64 },
    Vertex { vertex: usize },
}

impl GraphState {
    pub fn edge(&self) -> Option<usize> {
        match self {
            GraphState::Edge { edge, .. } => Some(*edge),
            GraphState::Vertex { .. } => None,
        }
    }
}

/// Distance along the graph between two positions on the same or adjacent edges.
pub fn rho(graph: &ReebGraph, a: &GraphState, b: &GraphState) -> f64 {
    let level = |s: &GraphState| match s {
        GraphState::Edge { g, .. } => *g,
        GraphState::Vertex { vertex } => graph.vertices[*vertex].g,
    };
    match (a, b) {
        (GraphState::Edge { edge: i, g: x }, GraphState::Edge { edge: j, g: y }) if i != j => {
            let (ei, ej) = (graph.edge(*i), graph.edge(*j));
            let shared = [ei.lower, ei.upper].into_iter().find(|v| *v == ej.lower || *v == ej.upper);
            match shared {
                Some(v) => (x - graph.vertices[v].g).abs() + (y - graph.vertices[v].g).abs(),
                None => f64::INFINITY,
            }
        }
        _ => (level(a) - level(b)).abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub t: f64,
    pub vertex: usize,
    pub edge: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphPath {
    pub points: Vec<(f64, GraphState)>,
    pub branches: Vec<Branch>,
    /// Absorbed at the boundary vertex.
    pub stopped: bool,
}

impl GraphPath {
    pub fn last(&self) -> &(f64, GraphState) {
        self.points.last().expect("path has a start")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "edge", "vertex", "g"])?;
        for (t, s) in &self.points {
            let (e, v, g) = match s {
                GraphState::Edge { edge, g } => (edge.to_string(), String::new(), format!("{g:.12e}")),
                GraphState::Vertex { vertex } => (String::new(), vertex.to_string(), String::new()),
            };
            out.write_record([format!("{t:.12e}"), e, v, g])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Deterministic averaged flow with an instantaneous Bernoulli branch at the saddle.
pub fn simulate_limit_process<R: Rng + ?Sized>(
    coeffs: &EdgeCoefficients,
    graph: &ReebGraph,
    saddle: &SaddleData,
    start: (usize, f64),
    t_end: f64,
    rng: &mut R,
) -> Result<GraphPath> {
    let branching = saddle.branching.as_ref().ok_or(Error::Missing("branching probabilities"))?;
    let lower: Vec<usize> = branching.p.keys().copied().collect();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut choice = *lower.last().unwrap();
    for &k in &lower {
        acc += branching.p[&k];
        if u < acc {
            choice = k;
            break;
        }
    }
    let slow = solve_slow_ode(coeffs, graph, start, t_end, Some(choice))?;
    let mut path = GraphPath::default();
    for (i, seg) in slow.segments.iter().enumerate() {
        if i > 0 {
            let t = seg.t_start();
            path.points.push((t, GraphState::Vertex { vertex: saddle.vertex }));
            path.branches.push(Branch {
                t,
                vertex: saddle.vertex,
                edge: seg.edge,
            });
        }
        let skip = usize::from(i > 0);
        for (t, g) in seg.times.iter().zip(&seg.levels).skip(skip) {
            if *t > t_end {
                break;
            }
            path.points.push((*t, GraphState::Edge { edge: seg.edge, g: *g }));
        }
    }
    let (k, g) = slow.at(t_end);
    if path.last().0 < t_end {
        path.points.push((t_end, GraphState::Edge { edge: k, g }));
    }
    Ok(path)
}

/// What happens when a walker reaches the boundary vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    Absorb,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSimConfig {
    /// Radius of the saddle neighborhood in `g`.
    pub h: f64,
    /// Step scale: each step moves a fraction `√c` of the distance to the nearest event.
    pub c: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Record every n-th step (vertex passages are always recorded).
    pub record_every: usize,
    pub boundary: BoundaryPolicy,
}

impl Default for GraphSimConfig {
    fn default() -> Self {
        Self {
            h: 1e-2,
            c: 0.05,
            dt_max: 1e-2,
            dt_min: 1e-10,
            record_every: 50,
            boundary: BoundaryPolicy::Absorb,
        }
    }
}

impl GraphSimConfig {
    /// Neighborhood radius `min(h, δ²/20)`, small against the drift-diffusion balance length.
    pub fn scaled_to(mut self, delta: f64) -> Self {
        self.h = self.h.min(0.05 * delta * delta);
        self
    }
}

#[derive(Debug, Clone)]
struct VertexRule {
    vertex: usize,
    g: f64,
    /// `(edge, above, q, β)`.
    edges: Vec<(usize, bool, f64, f64)>,
}

impl VertexRule {
    fn from_saddle(s: &SaddleData) -> Result<Self> {
        if s.q.is_empty() {
            return Err(Error::Missing("gluing weights"));
        }
        Ok(Self {
            vertex: s.vertex,
            g: s.g,
            edges: s.incident.iter().map(|&(k, up)| (k, up, s.q[&k], s.beta[&k])).collect(),
        })
    }
}

/// Outcome of one walker step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEvent {
    Moved,
    Vertex { vertex: usize, edge: usize },
    Absorbed,
}

/// A single graph-diffusion walker.
pub struct Walker<'a> {
    coeffs: &'a EdgeCoefficients,
    graph: &'a ReebGraph,
    rule: VertexRule,
    delta: f64,
    cfg: GraphSimConfig,
    pub t: f64,
    pub edge: usize,
    pub g: f64,
    pub stopped: bool,
}

impl<'a> Walker<'a> {
    pub fn new(
        coeffs: &'a EdgeCoefficients,
        graph: &'a ReebGraph,
        saddle: &SaddleData,
        delta: f64,
        cfg: GraphSimConfig,
        start: (usize, f64),
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Config(format!("noise level must be positive, got {delta}")));
        }
        let e = graph.try_edge(start.0)?;
        if !(start.1 >= e.lo && start.1 <= e.hi) {
            return Err(Error::EdgeRange { edge: start.0, g: start.1 });
        }
        Ok(Self {
            coeffs,
            graph,
            rule: VertexRule::from_saddle(saddle)?,
            delta,
            cfg,
            t: 0.0,
            edge: start.0,
            g: start.1,
            stopped: false,
        })
    }

    pub fn state(&self) -> GraphState {
        GraphState::Edge { edge: self.edge, g: self.g }
    }

    /// Distance from the saddle, if the current edge touches it.
    fn saddle_distance(&self) -> Option<f64> {
        let e = self.graph.edge(self.edge);
        if e.lower == self.rule.vertex {
            Some(self.g - self.rule.g)
        } else if e.upper == self.rule.vertex {
            Some(self.rule.g - self.g)
        } else {
            None
        }
    }

    /// Applies the exit law of the `h`-neighborhood from distance `r` on the current edge.
    fn vertex_exit<R: Rng + ?Sized>(&mut self, r: f64, rng: &mut R) -> usize {
        let h = self.cfg.h;
        let r = r.clamp(0.0, h);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.rule.edges.len() - 1;
        for (i, &(k, _, q, _)) in self.rule.edges.iter().enumerate() {
            acc += q * (1.0 - r / h) + if k == self.edge { r / h } else { 0.0 };
            if u < acc {
                pick = i;
                break;
            }
        }
        // mean exit time of the constant-coefficient star started at distance r
        let d2 = self.delta * self.delta;
        let periods: Vec<f64> = self
            .rule
            .edges
            .iter()
            .map(|&(k, up, _, _)| {
                let g = if up { self.rule.g + h } else { self.rule.g - h };
                self.coeffs.table(k).at(g).period
            })
            .collect();
        let beta_sum: f64 = self.rule.edges.iter().map(|e| e.3).sum();
        let c = h * h * periods.iter().sum::<f64>() / (d2 * beta_sum);
        let i = self.rule.edges.iter().position(|e| e.0 == self.edge).unwrap_or(0);
        let kappa = periods[i] / (d2 * self.rule.edges[i].3);
        let b = (kappa * h * h - c) / h;
        self.t += (c + b * r - kappa * r * r).max(0.0);
        let (k, up, _, _) = self.rule.edges[pick];
        self.edge = k;
        self.g = if up { self.rule.g + h } else { self.rule.g - h };
        k
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepEvent> {
        if self.stopped {
            return Ok(StepEvent::Absorbed);
        }
        let table = self.coeffs.table(self.edge);
        let c = table.at(self.g);
        let mu = c.drift(self.delta);
        let s2 = c.diffusion(self.delta).max(0.0);
        let e = self.graph.edge(self.edge);
        let h = self.cfg.h;
        let side = |v: usize, dist: f64| match self.graph.vertices[v].kind {
            VertexKind::Saddle => (dist - h).max(0.25 * h),
            _ => dist.max(h),
        };
        let d = side(e.lower, self.g - e.lo).min(side(e.upper, e.hi - self.g));
        let mut dt = self.cfg.dt_max;
        if s2 > 0.0 {
            dt = dt.min(self.cfg.c * d * d / s2);
        }
        if mu != 0.0 {
            dt = dt.min(self.cfg.c.sqrt() * d / mu.abs());
        }
        let dt = dt.max(self.cfg.dt_min);
        let z: f64 = rng.sample(StandardNormal);
        let dg = mu * dt + (s2 * dt).sqrt() * z;
        if dg.abs() > e.hi - e.lo {
            return Err(Error::StepTooLarge { dt, edge: self.edge });
        }
        self.t += dt;
        let mut g = self.g + dg;
        for (v, at_hi) in [(e.lower, false), (e.upper, true)] {
            let vg = self.graph.vertices[v].g;
            let beyond = if at_hi { g > vg } else { g < vg };
            match self.graph.vertices[v].kind {
                VertexKind::Minimum | VertexKind::Maximum if beyond => g = 2.0 * vg - g,
                VertexKind::Boundary if beyond => match self.cfg.boundary {
                    BoundaryPolicy::Absorb => {
                        self.g = vg;
                        self.stopped = true;
                        return Ok(StepEvent::Absorbed);
                    }
                    BoundaryPolicy::Reflect => g = 2.0 * vg - g,
                },
                _ => {}
            }
        }
        if g < e.lo || g > e.hi {
            let near_saddle = [e.lower, e.upper].contains(&self.rule.vertex);
            if !near_saddle {
                return Err(Error::StepTooLarge { dt, edge: self.edge });
            }
        }
        self.g = g;
        if let Some(r) = self.saddle_distance() {
            if r < h {
                let k = self.vertex_exit(r, rng);
                return Ok(StepEvent::Vertex {
                    vertex: self.rule.vertex,
                    edge: k,
                });
            }
        } else if [e.lower, e.upper].iter().any(|&v| self.graph.vertices[v].kind == VertexKind::Saddle) {
            return Err(Error::Config(format!("no gluing data for a saddle on edge {}", self.edge)));
        }
        Ok(StepEvent::Moved)
    }
}

/// Euler–Maruyama simulation of the averaged diffusion on the graph with the
/// gluing exit law at the saddle, reflection at extrema and the boundary policy at `P`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_graph_diffusion<R: Rng + ?Sized>(
    coeffs: &EdgeCoefficients,
    graph: &ReebGraph,
    saddle: &SaddleData,
    delta: f64,
    start: (usize, f64),
    t_end: f64,
    cfg: GraphSimConfig,
    rng: &mut R,
) -> Result<GraphPath> {
    let mut w = Walker::new(coeffs, graph, saddle, delta, cfg, start)?;
    let mut path = GraphPath::default();
    path.points.push((0.0, w.state()));
    let mut n = 0usize;
    while w.t < t_end {
        let before = w.t;
        match w.step(rng)? {
            StepEvent::Absorbed => {
                path.points.push((w.t, GraphState::Vertex { vertex: graph.edge(w.edge).upper }));
                path.stopped = true;
                return Ok(path);
            }
            StepEvent::Vertex { vertex, edge } => {
                path.points.push((before, GraphState::Vertex { vertex }));
                path.branches.push(Branch { t: before, vertex, edge });
                path.points.push((w.t, w.state()));
            }
            StepEvent::Moved => {
                n += 1;
                if cfg.record_every > 0 && n % cfg.record_every == 0 {
                    path.points.push((w.t, w.state()));
                }
            }
        }
    }
    if path.last().0 < w.t {
        path.points.push((w.t, w.state()));
    }
    Ok(path)
}

/// Mean first-passage time between the wells at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub delta: f64,
    pub n: usize,
    pub censored: usize,
    pub mean: f64,
    pub se: f64,
    /// `δ² ln τ̄`.
    pub scaled_log: f64,
}

/// Mean time to pass from near the bottom of `start_well` into the other well.
#[allow(clippy::too_many_arguments)]
pub fn transition_time_stats(
    coeffs: &EdgeCoefficients,
    graph: &ReebGraph,
    saddle: &SaddleData,
    delta_list: &[f64],
    start_well: usize,
    n_runs: usize,
    cfg: GraphSimConfig,
    t_max: f64,
    seed: u64,
) -> Result<Vec<TransitionRow>> {
    if !graph.is_well_edge(start_well) {
        return Err(Error::Config(format!("edge {start_well} is not a well")));
    }
    let e = graph.edge(start_well);
    let g0 = e.lo + 0.05 * (e.hi - e.lo);
    let mut rows = Vec::new();
    for (di, &delta) in delta_list.iter().enumerate() {
        let cfg = cfg.scaled_to(delta);
        let times: Vec<Option<f64>> = (0..n_runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, (di * n_runs + i) as u64);
                let mut w = Walker::new(coeffs, graph, saddle, delta, cfg, (start_well, g0))?;
                while w.t < t_max {
                    if let StepEvent::Vertex { edge, .. } = w.step(&mut rng)? {
                        if edge != start_well && graph.is_well_edge(edge) {
                            return Ok(Some(w.t));
                        }
                    }
                    if w.stopped {
                        return Ok(None);
                    }
                }
                Ok(None)
            })
            .collect::<Result<_>>()?;
        let done: Vec<f64> = times.iter().flatten().copied().collect();
        let (mean, se) = if done.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&done) };
        rows.push(TransitionRow {
            delta,
            n: n_runs,
            censored: n_runs - done.len(),
            mean,
            se,
            scaled_log: delta * delta * mean.ln(),
        });
    }
    Ok(rows)
}
