use rayon::prelude::*;

use super::{stream, ExperimentConfig, ExperimentKind, Gate, Route, Row, RunRecord, StatReport};
use crate::averaging::{metastable_thresholds, saddle_data, EdgeCoefficients, Outcome};
use crate::error::{Error, Result};
use crate::graphproc::{transition_time_stats, GraphSimConfig, Walker};
use crate::levelsets::{ReebGraph, TraceOptions};
use crate::numerics::stats::linear_fit;

/// Noise level at which `exp(λ/δ²)` equals `cap`, clamped to `range`.
pub fn horizon_delta(lambda: f64, cap: f64, range: [f64; 2]) -> f64 {
    (lambda / cap.ln()).sqrt().clamp(range[0], range[1])
}

/// Graph-level location at the horizon `exp(λ/δ²)` against the decision
/// table, threshold stability under grid doubling, and the growth of mean
/// transition times out of the shallow well.
pub fn run_metastability_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let sys = cfg.system.resolve()?;
    let graph = ReebGraph::build(&sys)?;
    let trace = TraceOptions::default();
    let report = metastable_thresholds(&sys, &graph, opts.grid, &trace)?;
    let sd = saddle_data(&sys, &graph)?;
    let coeffs = EdgeCoefficients::tabulate(&sys, &graph, opts.grid, &trace)?;
    let mut rep = StatReport::new(ExperimentKind::Metastability, cfg.seed);
    for (&k, &l) in &report.lambda {
        rep.push(
            Row::new("lambda-refinement", report.lambda_refined[&k], Route::LineIntegral)
                .param("edge", k as f64)
                .se(0.0)
                .theory(l)
                .gate(Gate::Relative { tol: tol.lambda_stability }),
        );
    }

    let start_level = |k: usize| -> f64 {
        let e = graph.edge(k);
        if k == report.upper {
            let g0 = sys.base_level();
            if e.contains(g0) {
                g0
            } else {
                e.lo + 0.1 * (e.hi - e.lo)
            }
        } else {
            e.lo + 0.05 * (e.hi - e.lo)
        }
    };
    for (ci, row) in report.rows.iter().enumerate() {
        if matches!(row.outcome, Outcome::NonGeneric) {
            continue;
        }
        let delta = horizon_delta(row.lambda, opts.horizon_cap, opts.delta_range);
        let mut horizon = (row.lambda / (delta * delta)).exp();
        if horizon > opts.horizon_cap {
            rep.note(format!(
                "case {ci}: horizon exp(λ/δ²) = {horizon:.3e} capped at {}",
                opts.horizon_cap
            ));
            horizon = opts.horizon_cap;
        }
        let gcfg = GraphSimConfig::default().scaled_to(delta);
        let start = (row.start, start_level(row.start));
        let ends: Vec<usize> = (0..cfg.n_runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(cfg.seed, ci, i);
                let mut w = Walker::new(&coeffs, &graph, &sd, delta, gcfg, start)?;
                while w.t < horizon && !w.stopped {
                    w.step(&mut rng)?;
                }
                Ok(w.edge)
            })
            .collect::<Result<_>>()?;
        for (i, &e) in ends.iter().enumerate() {
            rep.records.push(RunRecord {
                cell: format!("case {ci}"),
                run: i,
                outcome: Some(e),
                time: horizon,
                value: delta,
            });
        }
        let n = ends.len();
        let count = |k: usize| ends.iter().filter(|&&e| e == k).count();
        let tag = |r: Row| {
            r.param("case", ci as f64)
                .param("start", row.start as f64)
                .param("lambda", row.lambda)
                .param("delta", delta)
                .param("horizon", horizon)
        };
        match &row.outcome {
            Outcome::Point { edge } => rep.push(
                tag(Row::new("concentration", count(*edge) as f64 / n as f64, Route::DecisionTable))
                    .param("edge", *edge as f64)
                    .n(n)
                    .se(0.0)
                    .gate(Gate::AtLeast { min: tol.concentration }),
            ),
            Outcome::Mixture { p } => {
                for (&k, &pk) in p {
                    rep.push(
                        tag(Row::fraction("mixture", count(k), n, pk, Route::DecisionTable))
                            .param("edge", k as f64)
                            .gate(Gate::Sigma { k: tol.sigma }),
                    );
                }
            }
            Outcome::NonGeneric => unreachable!(),
        }
    }

    let shallow = report.shallow;
    let rows = transition_time_stats(
        &coeffs,
        &graph,
        &sd,
        &opts.transition_deltas,
        shallow,
        opts.transition_runs,
        GraphSimConfig::default(),
        opts.transition_t_max,
        cfg.seed,
    )?;
    for r in &rows {
        rep.push(
            Row::new("transition-time", r.mean, Route::Measurement)
                .param("delta", r.delta)
                .param("censored", r.censored as f64)
                .param("scaled_log", r.scaled_log)
                .n(r.n - r.censored)
                .se(r.se),
        );
    }
    let good: Vec<_> = rows.iter().filter(|r| r.scaled_log.is_finite()).collect();
    if good.len() >= 2 {
        let x: Vec<f64> = good.iter().map(|r| r.delta * r.delta).collect();
        let y: Vec<f64> = good.iter().map(|r| r.scaled_log).collect();
        let fit = linear_fit(&x, &y);
        let l = report.lambda[&shallow];
        rep.push(
            Row::new("transition-exponent", fit.intercept, Route::LineIntegral)
                .param("edge", shallow as f64)
                .se(0.0)
                .theory(l)
                .gate(Gate::Relative { tol: tol.transition_exponent }),
        );
        rep.push(
            Row::new("transition-exit-exponent", fit.intercept, Route::LineIntegral)
                .param("edge", shallow as f64)
                .se(0.0)
                .theory(report.exit_exponent[&shallow]),
        );
    } else {
        return Err(Error::Config("transition times censored at too many noise levels".into()));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_delta_hits_the_cap() {
        let d = horizon_delta(0.5, 1e3, [0.01, 1.0]);
        assert!(((0.5 / (d * d)).exp() - 1e3).abs() < 1e-6);
        assert_eq!(horizon_delta(100.0, 1e3, [0.1, 0.5]), 0.5);
    }
}
