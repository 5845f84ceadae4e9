use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{line_coefficients, region_flux};
use crate::error::{Error, Result};
use crate::geometry::SurfaceSystem;
use crate::levelsets::{ReebGraph, TraceOptions, VertexKind};
use crate::numerics::extrap::log_limit;
use crate::surface::QuadratureOptions;

/// Offsets from the saddle level used for the separatrix limits.
pub const SADDLE_OFFSETS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Branching probabilities into the edges below a saddle, by two routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branching {
    /// Reported probabilities (surface route).
    pub p: BTreeMap<usize, f64>,
    /// Separatrix limits of the drift numerator on each lower edge.
    pub line_limits: BTreeMap<usize, f64>,
    /// Curl flux through the region enclosed by each loop of the separatrix.
    pub surface_integrals: BTreeMap<usize, f64>,
    pub p_line: BTreeMap<usize, f64>,
    pub p_surface: BTreeMap<usize, f64>,
    /// Largest relative difference between the two routes.
    pub discrepancy: f64,
}

/// Gluing data at a saddle vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleData {
    pub vertex: usize,
    pub g: f64,
    /// Incident edges and whether each lies above the saddle.
    pub incident: Vec<(usize, bool)>,
    /// Separatrix limits of `B` on each incident edge.
    pub beta: BTreeMap<usize, f64>,
    /// Exit probabilities `β_i / Σ β_j`.
    pub q: BTreeMap<usize, f64>,
    /// `|β_upper - Σ β_lower| / β_upper`.
    pub additivity_defect: f64,
    pub branching: Option<Branching>,
}

impl SaddleData {
    /// One row per incident edge: `β`, `q` and, below the saddle, both branching routes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["vertex", "g", "edge", "above", "beta", "q", "p", "p_line", "p_surface"])?;
        let get = |m: Option<&BTreeMap<usize, f64>>, k: usize| {
            m.and_then(|m| m.get(&k)).map(|v| format!("{v:.12e}")).unwrap_or_default()
        };
        let br = self.branching.as_ref();
        for &(k, above) in &self.incident {
            out.write_record([
                self.vertex.to_string(),
                format!("{:.12e}", self.g),
                k.to_string(),
                above.to_string(),
                format!("{:.12e}", self.beta[&k]),
                format!("{:.12e}", self.q[&k]),
                get(br.map(|b| &b.p), k),
                get(br.map(|b| &b.p_line), k),
                get(br.map(|b| &b.p_surface), k),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn first_saddle(graph: &ReebGraph) -> Result<usize> {
    graph.saddles().map(|v| v.id).next().ok_or(Error::NoSaddle)
}

/// Separatrix limit of a line functional on edge `k`, approached from the side `above`.
fn separatrix_limits(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    vertex: usize,
) -> Result<Vec<(usize, bool, f64, f64)>> {
    let gs = graph.vertices[vertex].g;
    let incident = graph.incident(vertex);
    let jobs: Vec<(usize, bool, f64)> = incident
        .iter()
        .flat_map(|&(k, above)| SADDLE_OFFSETS.iter().map(move |&d| (k, above, if above { d } else { -d })))
        .collect();
    let opts = TraceOptions::default();
    let rows: Vec<(usize, f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(k, _, d)| line_coefficients(sys, graph, k, gs + d, &opts).map(|c| (k, d, c.a, c.b)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &(k, above) in &incident {
        let mine: Vec<&(usize, f64, f64, f64)> = rows.iter().filter(|r| r.0 == k).collect();
        let a: Vec<(f64, f64)> = mine.iter().map(|r| (r.1, r.2)).collect();
        let b: Vec<(f64, f64)> = mine.iter().map(|r| (r.1, r.3)).collect();
        out.push((k, above, log_limit(&a, 5e-3)?, log_limit(&b, 5e-3)?));
    }
    Ok(out)
}

/// Gluing weights `β_i` at the first saddle, as separatrix limits of `B_i(g)`.
pub fn gluing_weights(sys: &SurfaceSystem, graph: &ReebGraph) -> Result<SaddleData> {
    if sys.noise.is_none() {
        return Err(Error::Missing("noise map"));
    }
    let vertex = first_saddle(graph)?;
    let limits = separatrix_limits(sys, graph, vertex)?;
    Ok(assemble(graph, vertex, &limits, None))
}

fn assemble(graph: &ReebGraph, vertex: usize, limits: &[(usize, bool, f64, f64)], branching: Option<Branching>) -> SaddleData {
    let beta: BTreeMap<usize, f64> = limits.iter().map(|l| (l.0, l.3)).collect();
    let total: f64 = beta.values().sum();
    let q = beta.iter().map(|(&k, &b)| (k, b / total)).collect();
    let up: f64 = limits.iter().filter(|l| l.1).map(|l| l.3).sum();
    let down: f64 = limits.iter().filter(|l| !l.1).map(|l| l.3).sum();
    let (big, small) = if up >= down { (up, down) } else { (down, up) };
    SaddleData {
        vertex,
        g: graph.vertices[vertex].g,
        incident: limits.iter().map(|l| (l.0, l.1)).collect(),
        beta,
        q,
        additivity_defect: (big - small).abs() / big.max(1e-300),
        branching,
    }
}

fn normalized(m: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let total: f64 = m.values().sum();
    m.iter().map(|(&k, &v)| (k, v / total)).collect()
}

fn branching_from(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    vertex: usize,
    limits: &[(usize, bool, f64, f64)],
    opts: QuadratureOptions,
) -> Result<Branching> {
    let gs = graph.vertices[vertex].g;
    let lower: Vec<usize> = limits.iter().filter(|l| !l.1).map(|l| l.0).collect();
    if lower.len() < 2 {
        return Err(Error::Config("saddle does not split into two lower edges".into()));
    }
    let mut line_limits = BTreeMap::new();
    let mut surface = BTreeMap::new();
    for &k in &lower {
        let a = limits.iter().find(|l| l.0 == k).unwrap().2;
        let s = region_flux(sys, graph, k, gs, opts)?;
        let sign = if graph.inside_is_lower(k) { 1.0 } else { -1.0 };
        if sign * s <= 0.0 {
            return Err(Error::SignViolation { edge: k, value: s });
        }
        if a >= 0.0 {
            return Err(Error::SignViolation { edge: k, value: -a });
        }
        line_limits.insert(k, a);
        surface.insert(k, sign * s);
    }
    let p_line = normalized(&line_limits);
    let p_surface = normalized(&surface);
    let discrepancy = lower
        .iter()
        .map(|k| (p_line[k] - p_surface[k]).abs() / p_surface[k])
        .fold(0.0, f64::max);
    Ok(Branching {
        p: p_surface.clone(),
        line_limits,
        surface_integrals: surface,
        p_line,
        p_surface,
        discrepancy,
    })
}

/// Branching probabilities at the first saddle: ratios of the curl fluxes
/// through the separatrix loops, reconciled with the limits of the edge line integrals.
pub fn branching_probabilities(sys: &SurfaceSystem, graph: &ReebGraph) -> Result<Branching> {
    let vertex = first_saddle(graph)?;
    let limits = separatrix_limits(sys, graph, vertex)?;
    branching_from(sys, graph, vertex, &limits, QuadratureOptions::default())
}

/// Gluing weights and (for friction-like perturbations of a join saddle) branching probabilities.
pub fn saddle_data(sys: &SurfaceSystem, graph: &ReebGraph) -> Result<SaddleData> {
    let vertex = first_saddle(graph)?;
    let limits = separatrix_limits(sys, graph, vertex)?;
    let lower = graph.incident(vertex).iter().filter(|(_, above)| !above).count();
    let branching = if lower == 2 && graph.vertices[vertex].kind == VertexKind::Saddle {
        Some(branching_from(sys, graph, vertex, &limits, QuadratureOptions::default())?)
    } else {
        None
    };
    if sys.noise.is_none() {
        let mut d = assemble(graph, vertex, &limits, branching);
        d.q.clear();
        return Ok(d);
    }
    Ok(assemble(graph, vertex, &limits, branching))
}
