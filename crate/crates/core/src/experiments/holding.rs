use super::{integrator, ExperimentConfig, ExperimentKind, Gate, Route, Row, RunRecord, StatReport};
use crate::error::Result;
use crate::numerics::stats::{ks_exponential, mean_se};
use crate::surface::QuadratureOptions;
use crate::torus::{invariant_measure_check, limit_holding_samples, root_exits, torus_rates, FastFlow, TorusSystem};
use crate::levelsets::TraceOptions;

/// Invariant density of the conservative torus flow, the exponential holding law
/// of the limit process, and 3-D holding times at the root against the rates.
pub fn run_torus_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let sys = TorusSystem::canonical().with_epsilon(cfg.eps[0]).with_delta(cfg.delta[0]);
    let quad = QuadratureOptions::default();
    let graph = torus_rates(&sys, opts.grid, &TraceOptions::default(), quad)?;
    let wells = sys.resolve_wells()?;
    let mut rep = StatReport::new(ExperimentKind::Torus, cfg.seed);

    let x0 = sys.ergodic_point(&wells)?;
    let check = invariant_measure_check(
        &sys,
        &x0,
        opts.invariant_t_end,
        1.0,
        (opts.invariant_bins[0], opts.invariant_bins[1]),
        FastFlow::Standard,
        &integrator(cfg).with_step(opts.invariant_step),
        quad,
    )?;
    rep.push(
        Row::new("invariant-p-value", check.p_value, Route::InvariantDensity)
            .param("chi2", check.chi2)
            .param("t_end", opts.invariant_t_end)
            .n(check.samples)
            .se(0.0)
            .gate(Gate::AtLeast { min: tol.p_value }),
    );

    let rate = graph.kappa_hold * graph.total_rate();
    let limit = limit_holding_samples(&graph, opts.holding_samples, cfg.seed)?;
    let times: Vec<f64> = limit.iter().map(|s| s.0).collect();
    let (d, p) = ks_exponential(&times, rate);
    rep.push(
        Row::new("limit-holding-ks", p, Route::TorusRates)
            .param("statistic", d)
            .param("rate", rate)
            .n(times.len())
            .se(0.0)
            .gate(Gate::AtLeast { min: tol.p_value }),
    );

    let mut icfg = integrator(cfg);
    icfg.tol_f = 1e-6;
    let exits = root_exits(&sys, None, cfg.n_runs, opts.t_max, opts.entry_depth, &icfg)?;
    for (i, e) in exits.iter().enumerate() {
        rep.records.push(RunRecord {
            cell: "root-exit".into(),
            run: i,
            outcome: e.well,
            time: e.time,
            value: opts.entry_depth,
        });
    }
    let done: Vec<f64> = exits.iter().filter(|e| e.well.is_some()).map(|e| e.time).collect();
    let (mean, se) = mean_se(&done);
    let predicted = graph.holding_mean();
    rep.push(
        Row::new("holding-mean", mean, Route::TorusRates)
            .param("eps", sys.epsilon)
            .param("delta", sys.delta)
            .n(done.len())
            .se(se)
            .theory(predicted)
            .gate(Gate::Relative { tol: tol.holding_mean }),
    );
    rep.push(
        Row::new("kappa-hold", predicted / mean, Route::Measurement)
            .n(done.len())
            .se(predicted * se / (mean * mean)),
    );
    let branch = graph.branch_probabilities();
    let counts: Vec<usize> = branch
        .iter()
        .map(|(k, _)| exits.iter().filter(|e| e.well == Some(*k)).count())
        .collect();
    for ((k, pk), c) in branch.iter().zip(&counts) {
        rep.push(Row::fraction("branch", *c, done.len(), *pk, Route::TorusRates).param("edge", *k as f64));
    }
    // concordance of the empirical counts with the rate ordering
    let mut ordered = true;
    for i in 0..branch.len() {
        for j in 0..branch.len() {
            if branch[i].1 > branch[j].1 && counts[i] < counts[j] {
                ordered = false;
            }
        }
    }
    rep.push(
        Row::new("rate-ordering", if ordered { 1.0 } else { 0.0 }, Route::TorusRates)
            .se(0.0)
            .gate(Gate::AtLeast { min: 1.0 }),
    );
    rep.push(Row::new("censored", (exits.len() - done.len()) as f64, Route::Measurement).se(0.0));
    Ok(rep)
}
