use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{drift_integrand, line_coefficients, noise_integrands, LineCoefficients};
use crate::error::{Error, Result};
use crate::geometry::SurfaceSystem;
use crate::levelsets::{ReebGraph, TraceOptions, VertexKind};
use crate::numerics::Pchip;

/// Layout of the `g`-grid on each edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of uniform panels across the edge.
    pub uniform: usize,
    /// Decades of geometric refinement toward each end.
    pub decades: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { uniform: 24, decades: 6 }
    }
}

impl GridSpec {
    pub fn doubled(self) -> Self {
        Self {
            uniform: 2 * self.uniform,
            decades: self.decades,
        }
    }

    /// Interior grid on `(lo, hi)`, clustered geometrically at both ends.
    pub fn nodes(&self, lo: f64, hi: f64) -> Vec<f64> {
        let len = hi - lo;
        let mut rel: Vec<f64> = (1..self.uniform).map(|i| i as f64 / self.uniform as f64).collect();
        let first = 1.0 / self.uniform as f64;
        for d in 0..2 * self.decades {
            let r = first * 10f64.powf(-0.5 * (d as f64 + 1.0));
            rel.push(r);
            rel.push(1.0 - r);
        }
        rel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rel.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        rel.into_iter().map(|r| lo + len * r).collect()
    }
}

/// Tabulated line functionals on one edge, interpolated by monotone cubics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTable {
    pub edge: usize,
    pub lo: f64,
    pub hi: f64,
    pub lower_kind: VertexKind,
    pub upper_kind: VertexKind,
    pub period: Pchip,
    pub a: Pchip,
    pub a1: Pchip,
    pub a2: Pchip,
    pub b: Pchip,
}

impl EdgeTable {
    pub fn grid(&self) -> &[f64] {
        self.period.xs()
    }

    /// Interpolated coefficients; levels beyond the grid are clamped to its ends.
    pub fn at(&self, g: f64) -> LineCoefficients {
        let g = g.clamp(self.period.x_min(), self.period.x_max());
        LineCoefficients {
            edge: self.edge,
            g,
            period: self.period.eval(g),
            a: self.a.eval(g),
            a1: self.a1.eval(g),
            a2: self.a2.eval(g),
            b: self.b.eval(g).max(0.0),
        }
    }

    pub fn rows(&self) -> Vec<LineCoefficients> {
        (0..self.grid().len())
            .map(|i| LineCoefficients {
                edge: self.edge,
                g: self.grid()[i],
                period: self.period.ys()[i],
                a: self.a.ys()[i],
                a1: self.a1.ys()[i],
                a2: self.a2.ys()[i],
                b: self.b.ys()[i],
            })
            .collect()
    }

    pub(crate) fn from_rows(edge: usize, lo: f64, hi: f64, kinds: (VertexKind, VertexKind), rows: &[LineCoefficients]) -> Self {
        let xs: Vec<f64> = rows.iter().map(|r| r.g).collect();
        let col = |f: fn(&LineCoefficients) -> f64| Pchip::new(xs.clone(), rows.iter().map(f).collect());
        Self {
            edge,
            lo,
            hi,
            lower_kind: kinds.0,
            upper_kind: kinds.1,
            period: col(|r| r.period),
            a: col(|r| r.a),
            a1: col(|r| r.a1),
            a2: col(|r| r.a2),
            b: col(|r| r.b),
        }
    }
}

/// Coefficient tables for every edge of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCoefficients {
    pub fingerprint: String,
    pub grid: GridSpec,
    pub tables: Vec<EdgeTable>,
}

impl EdgeCoefficients {
    /// Traces every grid curve in parallel.  Ends of an edge at an extremum get
    /// the exact limit row (the orbit shrinks to the critical point).
    pub fn tabulate(sys: &SurfaceSystem, graph: &ReebGraph, grid: GridSpec, opts: &TraceOptions) -> Result<Self> {
        let mut jobs: Vec<(usize, f64)> = Vec::new();
        for e in &graph.edges {
            for g in grid.nodes(e.lo, e.hi) {
                jobs.push((e.id, g));
            }
            if graph.vertices[e.upper].kind == VertexKind::Boundary {
                jobs.push((e.id, e.hi));
            }
        }
        let rows: Vec<LineCoefficients> = jobs
            .par_iter()
            .map(|&(k, g)| line_coefficients(sys, graph, k, g, opts))
            .collect::<Result<_>>()?;
        let mut tables = Vec::new();
        for e in &graph.edges {
            let mut mine: Vec<LineCoefficients> = rows.iter().filter(|r| r.edge == e.id).copied().collect();
            for v in [e.lower, e.upper] {
                let vert = &graph.vertices[v];
                if let (Some(c), VertexKind::Minimum | VertexKind::Maximum) = (&vert.critical, vert.kind) {
                    let t0 = c.linear_period().unwrap();
                    let [a1, a2, b] = noise_integrands(sys, &c.x);
                    mine.push(LineCoefficients {
                        edge: e.id,
                        g: c.g,
                        period: t0,
                        a: t0 * drift_integrand(sys, &c.x),
                        a1: t0 * a1,
                        a2: t0 * a2,
                        b: t0 * b,
                    });
                }
            }
            mine.sort_by(|a, b| a.g.partial_cmp(&b.g).unwrap());
            let kinds = (graph.vertices[e.lower].kind, graph.vertices[e.upper].kind);
            tables.push(EdgeTable::from_rows(e.id, e.lo, e.hi, kinds, &mine));
        }
        Ok(Self {
            fingerprint: sys.fingerprint(),
            grid,
            tables,
        })
    }

    /// Content-addressed cache key for a system, graph and grid.
    pub fn cache_key(sys: &SurfaceSystem, graph: &ReebGraph, grid: GridSpec, opts: &TraceOptions) -> String {
        let ranges: Vec<(usize, f64, f64)> = graph.edges.iter().map(|e| (e.id, e.lo, e.hi)).collect();
        let text = serde_json::to_string(&(sys.fingerprint(), ranges, grid, opts)).expect("key serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads the tables from `dir` when present, otherwise tabulates and stores them.
    pub fn load_or_tabulate(
        sys: &SurfaceSystem,
        graph: &ReebGraph,
        grid: GridSpec,
        opts: &TraceOptions,
        dir: Option<&Path>,
    ) -> Result<Self> {
        let Some(dir) = dir else {
            return Self::tabulate(sys, graph, grid, opts);
        };
        let path = dir.join(format!("{}.json", Self::cache_key(sys, graph, grid, opts)));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(c) = serde_json::from_str::<Self>(&text) {
                return Ok(c);
            }
        }
        let c = Self::tabulate(sys, graph, grid, opts)?;
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&c)?)?;
        std::fs::rename(tmp, &path)?;
        Ok(c)
    }

    pub fn table(&self, k: usize) -> &EdgeTable {
        self.try_table(k).unwrap_or_else(|_| panic!("no table for edge {k}"))
    }

    pub fn try_table(&self, k: usize) -> Result<&EdgeTable> {
        self.tables
            .iter()
            .find(|t| t.edge == k)
            .ok_or_else(|| Error::Config(format!("no coefficient table for edge {k}")))
    }

    /// Long-format CSV: one row per edge and grid level.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Config(e.to_string());
        out.write_record(["edge", "g", "T", "A", "A1", "A2", "B"]).map_err(csv_err)?;
        for t in &self.tables {
            for r in t.rows() {
                out.write_record([
                    r.edge.to_string(),
                    format!("{:.15e}", r.g),
                    format!("{:.15e}", r.period),
                    format!("{:.15e}", r.a),
                    format!("{:.15e}", r.a1),
                    format!("{:.15e}", r.a2),
                    format!("{:.15e}", r.b),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_monotone_and_clustered() {
        let nodes = GridSpec::default().nodes(-0.25, 0.0);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(nodes[0] > -0.25 && nodes[0] < -0.25 + 1e-7);
        assert!(*nodes.last().unwrap() < 0.0 && *nodes.last().unwrap() > -1e-7);
    }

    #[test]
    fn tables_satisfy_sign_invariants_and_cache_round_trips() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let graph = ReebGraph::build(&sys).unwrap();
        let grid = GridSpec { uniform: 8, decades: 3 };
        let dir = tempfile::tempdir().unwrap();
        let c = EdgeCoefficients::load_or_tabulate(&sys, &graph, grid, &TraceOptions::default(), Some(dir.path())).unwrap();
        for t in &c.tables {
            for r in t.rows() {
                assert!(r.period > 0.0 && r.b >= 0.0, "{r:?}");
            }
        }
        // extremum rows carry the small-orbit period
        let t1 = c.table(1);
        assert!((t1.grid()[0] - t1.lo).abs() < 1e-15);
        assert!(t1.a.ys()[0].abs() < 1e-12 && t1.b.ys()[0].abs() < 1e-12);
        let again = EdgeCoefficients::load_or_tabulate(&sys, &graph, grid, &TraceOptions::default(), Some(dir.path())).unwrap();
        assert_eq!(c, again);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("edge,g,T,A,A1,A2,B"));
    }
}
