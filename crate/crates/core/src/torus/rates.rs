use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TorusSystem, Well};
use crate::averaging::{EdgeTable, GridSpec, LineCoefficients, SADDLE_OFFSETS};
use crate::error::{Error, Result};
use crate::flow::Dynamics;
use crate::geometry::Vec3;
use crate::levelsets::{trace_level_curve, Integrand, TraceOptions, VertexKind};
use crate::numerics::extrap::log_limit;
use crate::surface::QuadratureOptions;

/// Masses `∬ dm/|∇F|` of the torus, of each well and of the ergodic component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantMasses {
    pub total: f64,
    pub wells: Vec<f64>,
    pub ergodic: f64,
}

pub fn invariant_masses(sys: &TorusSystem, wells: &[Well], opts: QuadratureOptions) -> Result<InvariantMasses> {
    let weight = |x: &Vec3| 1.0 / sys.f.gradient(x).norm();
    sys.with_atlas(|atlas| {
        let total = atlas.integrate_surface(weight, opts)?;
        let per = wells
            .iter()
            .map(|w| atlas.integrate_region(|x| -w.depth(x), |x| sys.contains(w, x), weight, opts))
            .collect::<Result<Vec<_>>>()?;
        let ergodic = total - per.iter().sum::<f64>();
        Ok(InvariantMasses {
            total,
            wells: per,
            ergodic,
        })
    })
}

/// Root-to-edge data of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRates {
    pub well: usize,
    pub maximum: bool,
    /// Separatrix limit `2 a_k(0)` of the drift numerator.
    pub psi: f64,
    /// Whether the slow drift carries mass from the root into the well.
    pub entry: bool,
    /// Transition rate from the root.
    pub rate: f64,
    /// Separatrix limit of the loop integral `b_k`.
    pub b_separatrix: f64,
    /// `b_separatrix` over the mass of the ergodic component.
    pub beta: f64,
    pub table: EdgeTable,
}

impl EdgeRates {
    /// Averaged speed `a_k / T_k` at edge coordinate `y`.
    pub fn speed(&self, y: f64) -> f64 {
        let c = self.table.at(y);
        c.a / c.period
    }
}

/// Graph with one root vertex (the ergodic component) and one edge per well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootedGraph {
    pub masses: InvariantMasses,
    /// Holding-time rate is `kappa_hold · Σ r_k`.
    pub kappa_hold: f64,
    pub edges: Vec<EdgeRates>,
}

impl RootedGraph {
    pub fn lambda(&self) -> f64 {
        self.masses.ergodic
    }

    pub fn total_rate(&self) -> f64 {
        self.edges.iter().map(|e| e.rate).sum()
    }

    /// Mean holding time at the root; infinite if no well can be entered.
    pub fn holding_mean(&self) -> f64 {
        let r = self.kappa_hold * self.total_rate();
        if r > 0.0 {
            1.0 / r
        } else {
            f64::INFINITY
        }
    }

    /// `(well, r_k / Σ r)`; empty if no well can be entered.
    pub fn branch_probabilities(&self) -> Vec<(usize, f64)> {
        let total = self.total_rate();
        if total <= 0.0 {
            return Vec::new();
        }
        self.edges.iter().map(|e| (e.well, e.rate / total)).collect()
    }

    /// One row per well with its rate, entry flag and branch probability.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["well", "maximum", "psi", "entry", "rate", "b_separatrix", "beta", "branch"])?;
        let total = self.total_rate();
        for e in &self.edges {
            let branch = if total > 0.0 { e.rate / total } else { 0.0 };
            out.write_record([
                e.well.to_string(),
                e.maximum.to_string(),
                format!("{:.12e}", e.psi),
                e.entry.to_string(),
                format!("{:.12e}", e.rate),
                format!("{:.12e}", e.b_separatrix),
                format!("{:.12e}", e.beta),
                format!("{branch:.12e}"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn edge(&self, well: usize) -> Result<&EdgeRates> {
        self.edges
            .iter()
            .find(|e| e.well == well)
            .ok_or_else(|| Error::Config(format!("no well {well}")))
    }
}

/// Entry rule: the drift enters a maximum well when `ψ > 0` and a minimum well when `ψ < 0`.
pub fn entry_flag(psi: f64, maximum: bool) -> bool {
    (psi > 0.0 && maximum) || (psi < 0.0 && !maximum)
}

fn integrands(sys: &TorusSystem, well: &Well, x: &Vec3) -> [f64; 4] {
    let gh = well.h.gradient(x);
    let a = gh.dot(&sys.slow(x));
    let Some(noise) = &sys.noise else { return [a, 0.0, 0.0, 0.0] };
    let sigma = noise.sigma(&sys.f, x);
    let a1 = gh.dot(&noise.ito_correction(&sys.f, x));
    let a2 = (sigma * sigma.transpose() * well.h.hessian(x)).trace();
    let b = (sigma.transpose() * gh).norm_squared();
    [a, a1, a2, b]
}

/// Point on the chart segment from the extremum to the saddle at edge coordinate `y`.
fn seed(sys: &TorusSystem, well: &Well, y: f64) -> Result<Vec3> {
    let (u1, v1) = sys.angles(&well.saddle.x);
    let du = crate::geometry::wrap_angle(u1 - well.center.0, 0.0);
    let dv = crate::geometry::wrap_angle(v1 - well.center.1, 0.0);
    let at = |s: f64| sys.point_at(well.center.0 + s * du, well.center.1 + s * dv);
    let side = |s: f64| -> Result<bool> { Ok(well.depth(&at(s)?) > well.depth_of(y)) };
    let (mut lo, mut hi) = (0.0, 1.0);
    if !side(lo)? || side(hi)? {
        return Err(Error::Config(format!("level {y} is not crossed between extremum and saddle of well {}", well.index)));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if side(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Line functionals on the level curve of well `k` at edge coordinate `y`.
pub(crate) fn well_line(sys: &TorusSystem, well: &Well, y: f64, opts: &TraceOptions) -> Result<LineCoefficients> {
    let x0 = seed(sys, well, y)?;
    let fa = |x: &Vec3| integrands(sys, well, x)[0];
    let f1 = |x: &Vec3| integrands(sys, well, x)[1];
    let f2 = |x: &Vec3| integrands(sys, well, x)[2];
    let fb = |x: &Vec3| integrands(sys, well, x)[3];
    let list: Vec<Integrand> = vec![&fa, &f1, &f2, &fb];
    let c = trace_level_curve(&sys.f, sys.level, &well.h, well.saddle.g + y, &x0, &list, opts)?;
    Ok(LineCoefficients {
        edge: well.index,
        g: y,
        period: c.period,
        a: c.integrals[0],
        a1: c.integrals[1],
        a2: c.integrals[2],
        b: c.integrals[3],
    })
}

fn well_table(sys: &TorusSystem, well: &Well, grid: GridSpec, opts: &TraceOptions) -> Result<EdgeTable> {
    let (lo, hi) = well.range();
    let mut rows: Vec<LineCoefficients> = grid
        .nodes(lo, hi)
        .par_iter()
        .map(|&y| well_line(sys, well, y, opts))
        .collect::<Result<_>>()?;
    let m = &well.extremum;
    let t0 = m.linear_period().expect("extremum has a period");
    let [a, a1, a2, b] = integrands(sys, well, &m.x);
    rows.push(LineCoefficients {
        edge: well.index,
        g: well.extremum_level(),
        period: t0,
        a: t0 * a,
        a1: t0 * a1,
        a2: t0 * a2,
        b: t0 * b,
    });
    rows.sort_by(|a, b| a.g.partial_cmp(&b.g).unwrap());
    let kinds = if well.maximum {
        (VertexKind::Saddle, VertexKind::Maximum)
    } else {
        (VertexKind::Minimum, VertexKind::Saddle)
    };
    Ok(EdgeTable::from_rows(well.index, lo, hi, kinds, &rows))
}

/// Separatrix limits `(a_k(0), b_k(0))` from inside the well.
fn separatrix_limits(sys: &TorusSystem, well: &Well, opts: &TraceOptions) -> Result<(f64, f64)> {
    let sign = if well.maximum { 1.0 } else { -1.0 };
    let rows: Vec<LineCoefficients> = SADDLE_OFFSETS
        .par_iter()
        .map(|&d| well_line(sys, well, sign * d, opts))
        .collect::<Result<_>>()?;
    let a: Vec<(f64, f64)> = rows.iter().map(|r| (r.g, r.a)).collect();
    let b: Vec<(f64, f64)> = rows.iter().map(|r| (r.g, r.b)).collect();
    Ok((log_limit(&a, 5e-3)?, log_limit(&b, 5e-3)?))
}

/// Masses, separatrix limits, entry flags, rates and edge tables of every well.
pub fn torus_rates(
    sys: &TorusSystem,
    grid: GridSpec,
    trace: &TraceOptions,
    quad: QuadratureOptions,
) -> Result<RootedGraph> {
    let wells = sys.resolve_wells()?;
    let masses = invariant_masses(sys, &wells, quad)?;
    let lambda = masses.ergodic;
    if !(lambda > 0.0) {
        return Err(Error::Config("wells cover the whole torus".into()));
    }
    let mut edges = Vec::new();
    for w in &wells {
        let (a0, b0) = separatrix_limits(sys, w, trace)?;
        let psi = 2.0 * a0;
        let scale = wells
            .iter()
            .map(|w| (w.extremum_level()).abs())
            .fold(0.0, f64::max)
            .max(1.0);
        if psi.abs() <= 1e-12 * scale {
            return Err(Error::VanishingPsi { well: w.index, value: psi });
        }
        let entry = entry_flag(psi, w.maximum);
        let rate = if entry { psi.abs() / (2.0 * lambda) } else { 0.0 };
        edges.push(EdgeRates {
            well: w.index,
            maximum: w.maximum,
            psi,
            entry,
            rate,
            b_separatrix: b0,
            beta: b0 / lambda,
            table: well_table(sys, w, grid, trace)?,
        });
    }
    Ok(RootedGraph {
        masses,
        kappa_hold: 1.0,
        edges,
    })
}
