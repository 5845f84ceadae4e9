use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::saddle::branching_probabilities;
use super::table::{EdgeCoefficients, EdgeTable, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::SurfaceSystem;
use crate::levelsets::{ReebGraph, TraceOptions, VertexKind};
use crate::numerics::Pchip;

/// Relative gap below which two well depths count as equal.
pub const TIE_TOLERANCE: f64 = 1e-4;

/// Least-squares `(c₁, c₂)` in `v ≈ c₁u + c₂u²`.
fn quadratic_through_origin(pts: &[(f64, f64)]) -> (f64, f64) {
    let (mut s2, mut s3, mut s4, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, v) in pts {
        s2 += u * u;
        s3 += u * u * u;
        s4 += u * u * u * u;
        t1 += u * v;
        t2 += u * u * v;
    }
    let det = s2 * s4 - s3 * s3;
    ((t1 * s4 - t2 * s3) / det, (s2 * t2 - s3 * t1) / det)
}

/// `λ = ∫ (-A/B) dg` from the bottom of a well edge to its saddle.
pub fn lambda_integral(table: &EdgeTable) -> Result<f64> {
    if table.lower_kind != VertexKind::Minimum {
        return Err(Error::Config(format!("edge {} does not end at a minimum", table.edge)));
    }
    let rows: Vec<_> = table.rows().into_iter().filter(|r| r.g > table.lo && r.b > 0.0).collect();
    if rows.len() < 4 {
        return Err(Error::Config(format!("edge {} has too few grid levels", table.edge)));
    }
    let near: Vec<(f64, f64, f64)> = rows.iter().take(3).map(|r| (r.g - table.lo, r.a, r.b)).collect();
    // local power laws of A and B at the minimum
    let slope = |i: usize| {
        let (u0, u1) = (near[0].0, near[2].0);
        let (v0, v1) = if i == 0 { (near[0].1, near[2].1) } else { (near[0].2, near[2].2) };
        (v1.abs() / v0.abs()).ln() / (u1 / u0).ln()
    };
    let exponent = slope(1) - slope(0);
    if exponent > 0.5 {
        return Err(Error::DivergentIntegral { endpoint: table.lo, exponent });
    }
    let (a1, _) = quadratic_through_origin(&near.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>());
    let (b1, _) = quadratic_through_origin(&near.iter().map(|p| (p.0, p.2)).collect::<Vec<_>>());
    let mut xs = vec![table.lo];
    let mut ys = vec![-a1 / b1];
    for r in &rows {
        xs.push(r.g);
        ys.push(-r.a / r.b);
    }
    if *xs.last().unwrap() < table.hi {
        xs.push(table.hi);
        ys.push(*ys.last().unwrap());
    }
    Ok(Pchip::new(xs, ys).integral())
}

/// Long-time limit of the averaged process on the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    /// Concentrates near the minimum of the given well edge.
    Point { edge: usize },
    /// Splits between wells with the given probabilities.
    Mixture { p: BTreeMap<usize, f64> },
    /// Threshold coincidence; no limit is asserted.
    NonGeneric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub start: usize,
    pub lambda: f64,
    pub outcome: Outcome,
}

/// Well depths, exit exponents and the resulting time-scale decision table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastableReport {
    pub saddle: usize,
    pub upper: usize,
    pub deep: usize,
    pub shallow: usize,
    pub lambda: BTreeMap<usize, f64>,
    /// Same integrals on a grid with twice as many uniform panels.
    pub lambda_refined: BTreeMap<usize, f64>,
    /// Exit times grow like `exp(exit_exponent / δ²)`, with `exit_exponent = 2λ`.
    pub exit_exponent: BTreeMap<usize, f64>,
    pub p: BTreeMap<usize, f64>,
    pub tie: bool,
    pub rows: Vec<DecisionRow>,
}

impl MetastableReport {
    /// Limit on the time scale `exp(lambda / δ²)` for a process started on edge `start`.
    pub fn decide(&self, start: usize, lambda: f64) -> Outcome {
        let shallow = self.exit_exponent[&self.shallow];
        let deep = self.exit_exponent[&self.deep];
        let near = |t: f64| (lambda - t).abs() <= TIE_TOLERANCE * t;
        if near(shallow) || near(deep) || (self.tie && lambda > shallow) {
            return Outcome::NonGeneric;
        }
        if lambda > shallow {
            return Outcome::Point { edge: self.deep };
        }
        if start == self.upper {
            Outcome::Mixture { p: self.p.clone() }
        } else {
            Outcome::Point { edge: start }
        }
    }

    fn fill_rows(&mut self) {
        let (s, d) = (self.exit_exponent[&self.shallow], self.exit_exponent[&self.deep]);
        let lambdas = [0.5 * s, 0.5 * (s + d), 1.1 * d.max(s)];
        let mut rows = Vec::new();
        for start in [self.shallow, self.deep, self.upper] {
            for &lambda in &lambdas {
                rows.push(DecisionRow {
                    start,
                    lambda,
                    outcome: self.decide(start, lambda),
                });
            }
        }
        self.rows = rows;
    }
}

fn well_lambdas(coeffs: &EdgeCoefficients, wells: &[usize]) -> Result<BTreeMap<usize, f64>> {
    wells.iter().map(|&k| Ok((k, lambda_integral(coeffs.try_table(k)?)?))).collect()
}

/// Depths of the two wells below the first saddle and the decision table.
pub fn metastable_thresholds(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    grid: GridSpec,
    opts: &TraceOptions,
) -> Result<MetastableReport> {
    if sys.noise.is_none() {
        return Err(Error::Missing("noise map"));
    }
    let saddle = graph.saddles().map(|v| v.id).next().ok_or(Error::NoSaddle)?;
    let incident = graph.incident(saddle);
    let wells: Vec<usize> = incident.iter().filter(|(k, up)| !up && graph.is_well_edge(*k)).map(|p| p.0).collect();
    let upper = incident.iter().find(|p| p.1).map(|p| p.0).ok_or(Error::NoSaddle)?;
    if wells.len() != 2 {
        return Err(Error::Config("first saddle must join two wells".into()));
    }
    let coarse = EdgeCoefficients::tabulate(sys, graph, grid, opts)?;
    let fine = EdgeCoefficients::tabulate(sys, graph, grid.doubled(), opts)?;
    let lambda = well_lambdas(&coarse, &wells)?;
    let lambda_refined = well_lambdas(&fine, &wells)?;
    let (l0, l1) = (lambda[&wells[0]], lambda[&wells[1]]);
    let (deep, shallow) = if l0 >= l1 { (wells[0], wells[1]) } else { (wells[1], wells[0]) };
    let tie = (l0 - l1).abs() <= TIE_TOLERANCE * l0.max(l1);
    let p = branching_probabilities(sys, graph)?.p;
    let mut report = MetastableReport {
        saddle,
        upper,
        deep,
        shallow,
        exit_exponent: lambda.iter().map(|(&k, &l)| (k, 2.0 * l)).collect(),
        lambda,
        lambda_refined,
        p,
        tie,
        rows: Vec::new(),
    };
    report.fill_rows();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::LineCoefficients;
    use crate::geometry::{NoiseMap, SmoothField};

    /// Extremum of `±G` on the lower half of the great circle `x₂ = 0` by golden-section search.
    fn extremum(beta: f64, lo: f64, hi: f64, sign: f64) -> f64 {
        let g = |x1: f64| sign * (-(1.0 - x1 * x1).sqrt() - x1 * x1 - beta * x1 + 1.0);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if g(c) < g(d) {
                b = d;
            } else {
                a = c;
            }
        }
        sign * g(0.5 * (a + b))
    }

    fn well_depth(beta: f64, lo: f64, hi: f64) -> f64 {
        extremum(beta, -0.5, 0.5, -1.0) - extremum(beta, lo, hi, 1.0)
    }

    #[test]
    fn depths_equal_level_gaps_for_gradient_friction() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let graph = ReebGraph::build(&sys).unwrap();
        let rep = metastable_thresholds(&sys, &graph, GridSpec::default(), &TraceOptions::default()).unwrap();
        let deep = well_depth(0.1, 0.0, 1.0);
        let shallow = well_depth(0.1, -1.0, 0.0);
        assert_eq!((rep.deep, rep.shallow, rep.upper), (1, 3, 2));
        assert!((rep.lambda[&1] - deep).abs() < 1e-5, "{} {deep}", rep.lambda[&1]);
        assert!((rep.lambda[&3] - shallow).abs() < 1e-5);
        assert!(!rep.tie);
        for (k, l) in &rep.lambda {
            assert!((l - rep.lambda_refined[k]).abs() < 1e-6);
            assert_eq!(rep.exit_exponent[k], 2.0 * l);
        }
    }

    #[test]
    fn decision_table_follows_time_scales() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let graph = ReebGraph::build(&sys).unwrap();
        let rep = metastable_thresholds(&sys, &graph, GridSpec { uniform: 12, decades: 4 }, &TraceOptions::default()).unwrap();
        let s = rep.exit_exponent[&3];
        let d = rep.exit_exponent[&1];
        assert_eq!(rep.decide(3, 0.5 * s), Outcome::Point { edge: 3 });
        assert_eq!(rep.decide(1, 0.5 * s), Outcome::Point { edge: 1 });
        assert_eq!(rep.decide(2, 0.5 * s), Outcome::Mixture { p: rep.p.clone() });
        for start in [1, 2, 3] {
            assert_eq!(rep.decide(start, 0.5 * (s + d)), Outcome::Point { edge: 1 });
            assert_eq!(rep.decide(start, 1.1 * d), Outcome::Point { edge: 1 });
        }
        assert_eq!(rep.decide(2, s), Outcome::NonGeneric);
        assert_eq!(rep.rows.len(), 9);
    }

    #[test]
    fn symmetric_wells_tie() {
        let sys = SurfaceSystem::sphere_double_well(0.0);
        let graph = ReebGraph::build(&sys).unwrap();
        let rep = metastable_thresholds(&sys, &graph, GridSpec { uniform: 12, decades: 4 }, &TraceOptions::default()).unwrap();
        assert!(rep.tie);
        assert!((rep.lambda[&1] - 0.25).abs() < 1e-5);
        assert_eq!(rep.decide(1, 1.5 * rep.exit_exponent[&1]), Outcome::NonGeneric);
        assert_eq!(rep.decide(1, 0.5 * rep.exit_exponent[&1]), Outcome::Point { edge: 1 });
    }

    #[test]
    fn state_dependent_noise_changes_depths() {
        let scale = SmoothField::polynomial(&[(1.0, [0, 0, 0]), (0.5, [1, 0, 0])]);
        let sys = SurfaceSystem::sphere_double_well(0.1).with_noise(Some(NoiseMap::scaled_projection(scale)));
        let graph = ReebGraph::build(&sys).unwrap();
        let rep = metastable_thresholds(&sys, &graph, GridSpec { uniform: 12, decades: 4 }, &TraceOptions::default()).unwrap();
        let deep = well_depth(0.1, 0.0, 1.0);
        // larger noise on the x₁ > 0 side makes that well shallower in λ
        assert!(rep.lambda[&1] < deep - 1e-2);
        assert!((rep.lambda[&1] - rep.lambda_refined[&1]).abs() < 1e-4 * rep.lambda[&1]);
    }

    #[test]
    fn noise_vanishing_faster_than_drift_diverges() {
        let rows: Vec<LineCoefficients> = (0..=10)
            .map(|i| {
                let u = 0.1 * i as f64;
                LineCoefficients {
                    edge: 1,
                    g: u,
                    period: 1.0,
                    a: -u,
                    a1: 0.0,
                    a2: 0.0,
                    b: u * u * u,
                }
            })
            .collect();
        let t = EdgeTable::from_rows(1, 0.0, 1.0, (VertexKind::Minimum, VertexKind::Saddle), &rows);
        assert!(matches!(lambda_integral(&t), Err(Error::DivergentIntegral { .. })));
        let ok: Vec<LineCoefficients> = rows.iter().map(|r| LineCoefficients { b: 2.0 * r.g, ..*r }).collect();
        let t = EdgeTable::from_rows(1, 0.0, 1.0, (VertexKind::Minimum, VertexKind::Saddle), &ok);
        assert!((lambda_integral(&t).unwrap() - 0.5).abs() < 1e-12);
    }
}
