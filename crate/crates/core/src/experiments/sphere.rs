use rayon::prelude::*;

use super::{integrator, lower_pair, stream, ExperimentConfig, ExperimentKind, Gate, Route, Row, RunRecord, StatReport};
use crate::averaging::{branching_probabilities, line_coefficients, solve_slow_ode, EdgeCoefficients};
use crate::error::{Error, Result};
use crate::flow::{integrate_slow, project_to_level, sample_uniform_neighborhood, Stepper, Trajectory, Watch};
use crate::geometry::{fast_field, SurfaceSystem, Vec3};
use crate::levelsets::{project_to_curve, tangential_gradient, ReebGraph, TraceOptions};
use crate::numerics::stats::{linear_fit, mean_se};

fn saddle_level(graph: &ReebGraph) -> Result<(usize, f64)> {
    graph.saddles().next().map(|v| (v.id, v.g)).ok_or(Error::NoSaddle)
}

/// Edge above the first saddle.
fn upper_edge(graph: &ReebGraph, saddle: usize) -> Result<usize> {
    graph.incident(saddle).into_iter().find(|p| p.1).map(|p| p.0).ok_or(Error::NoSaddle)
}

/// First time the recorded `G` falls to `level`, interpolated between samples.
pub fn hitting_time(traj: &Trajectory, level: f64) -> Option<f64> {
    let first = traj.samples.first()?;
    if first.g <= level {
        return Some(first.t);
    }
    traj.samples.windows(2).find(|w| w[1].g <= level).map(|w| {
        let s = (w[0].g - level) / (w[0].g - w[1].g);
        w[0].t + s * (w[1].t - w[0].t)
    })
}

/// Fraction of runs entering the first well from a disc around the base point,
/// and the time at which the saddle level is first reached.
pub fn run_branching_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let base = cfg.system.resolve()?;
    let graph = ReebGraph::build(&base)?;
    let (_, gs) = saddle_level(&graph)?;
    let br = branching_probabilities(&base, &graph)?;
    let (w1, w3) = lower_pair(&br.p)?;
    let (p1, route) = if cfg.system.is_symmetric() {
        (0.5, Route::Symmetry)
    } else {
        (br.p[&w1], Route::SurfaceIntegral)
    };
    let mut rep = StatReport::new(ExperimentKind::Branching, cfg.seed);
    rep.push(
        Row::new("route-agreement", br.p_line[&w1], Route::LineIntegral)
            .param("edge", w1 as f64)
            .theory(br.p_surface[&w1])
            .gate(Gate::Relative { tol: tol.route_agreement }),
    );
    rep.push(Row::new("p", br.p[&w3], Route::SurfaceIntegral).param("edge", w3 as f64));

    let coeffs = EdgeCoefficients::tabulate(&base, &graph, opts.grid, &TraceOptions::default())?;
    let x0 = base.base_point;
    let g0 = base.base_level();
    let (k0, _) = graph.classify_point(&base, &x0)?;
    let slow = solve_slow_ode(&coeffs, &graph, (k0, g0), opts.t_max, Some(w1))?;
    let tau0 = slow.tau0.ok_or(Error::Missing("saddle passage of the averaged path"))?;
    let lc = coeffs.table(k0).at(g0);
    // first-order dependence of τ₀ on the starting level
    let dtau = lc.period / lc.a.abs();
    let icfg = integrator(cfg);

    for (ei, &eps) in cfg.eps.iter().enumerate() {
        let sys = base.clone().with_epsilon(eps);
        for (di, &radius) in cfg.delta.iter().enumerate() {
            let cell = ei * cfg.delta.len() + di;
            let runs: Vec<(Option<usize>, Option<f64>, f64)> = (0..cfg.n_runs)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(cfg.seed, cell, i);
                    let x = sample_uniform_neighborhood(&sys.f, sys.level, &x0, radius, &mut rng)?;
                    let traj = integrate_slow(&sys, &x, opts.t_max, &icfg, Watch::wells(&graph))?;
                    Ok((traj.entered_well(), hitting_time(&traj, gs), sys.g.value(&x)))
                })
                .collect::<Result<_>>()?;
            let name = format!("eps={eps:e} r={radius}");
            for (i, r) in runs.iter().enumerate() {
                rep.records.push(RunRecord {
                    cell: name.clone(),
                    run: i,
                    outcome: r.0,
                    time: r.1.unwrap_or(f64::NAN),
                    value: r.2,
                });
            }
            let entered = runs.iter().filter(|r| r.0.is_some()).count();
            let k1 = runs.iter().filter(|r| r.0 == Some(w1)).count();
            rep.push(
                Row::fraction("well-fraction", k1, entered, p1, route)
                    .param("eps", eps)
                    .param("radius", radius)
                    .param("edge", w1 as f64)
                    .gate(Gate::Sigma { k: tol.sigma }),
            );
            let hits: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
            let g_mean = runs.iter().map(|r| r.2).sum::<f64>() / runs.len() as f64;
            let (mean, se) = if hits.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&hits) };
            rep.push(
                Row::new("saddle-hitting-time", mean, Route::SlowOde)
                    .param("eps", eps)
                    .param("radius", radius)
                    .n(hits.len())
                    .se(se)
                    .theory(tau0 + (g_mean - g0) * dtau)
                    .gate(Gate::Relative { tol: tol.hitting_time }),
            );
            rep.push(
                Row::new("censored", (cfg.n_runs - entered) as f64, Route::Measurement)
                    .param("eps", eps)
                    .param("radius", radius)
                    .n(cfg.n_runs)
                    .se(0.0),
            );
        }
    }
    Ok(rep)
}

/// `sup |G(X_t) - ĝ_t|` over the run from the base point until `ĝ` is
/// `bottom_margin` above the bottom of the entered well.
pub fn run_averaging_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let opts = &cfg.options;
    let base = cfg.system.resolve()?;
    let graph = ReebGraph::build(&base)?;
    let coeffs = EdgeCoefficients::tabulate(&base, &graph, opts.grid, &TraceOptions::default())?;
    let x0 = base.base_point;
    let g0 = base.base_level();
    let (k0, _) = graph.classify_point(&base, &x0)?;
    let mut icfg = integrator(cfg);
    icfg.record_every = 5;
    let watch = Watch {
        graph: Some(&graph),
        stop_on_well: false,
        stop_on_boundary: true,
    };
    let mut rep = StatReport::new(ExperimentKind::Averaging, cfg.seed);
    let mut sups = Vec::new();
    for &eps in &cfg.eps {
        let sys = base.clone().with_epsilon(eps);
        let traj = integrate_slow(&sys, &x0, opts.t_max, &icfg, watch)?;
        let well = traj.entered_well().ok_or(Error::Missing("well entry within t_max"))?;
        let slow = solve_slow_ode(&coeffs, &graph, (k0, g0), opts.t_max, Some(well))?;
        let target = graph.edge(well).lo + opts.bottom_margin;
        if slow.at(opts.t_max).1 > target {
            return Err(Error::Config(format!("averaged path does not reach {target} before t_max")));
        }
        let (mut lo, mut hi) = (0.0, opts.t_max);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if slow.at(mid).1 > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let horizon = hi;
        let sup = traj
            .samples
            .iter()
            .take_while(|s| s.t <= horizon)
            .map(|s| (s.g - slow.at(s.t).1).abs())
            .fold(0.0, f64::max);
        for (i, s) in traj.samples.iter().enumerate().take_while(|(_, s)| s.t <= horizon) {
            rep.records.push(RunRecord {
                cell: format!("eps={eps:e}"),
                run: i,
                outcome: Some(well),
                time: s.t,
                value: s.g - slow.at(s.t).1,
            });
        }
        sups.push(sup);
        rep.push(
            Row::new("sup-deviation", sup, Route::SlowOde)
                .param("eps", eps)
                .param("horizon", horizon)
                .param("edge", well as f64)
                .se(0.0)
                .theory(0.0)
                .gate_if(eps == *cfg.eps.last().unwrap(), Gate::AtMost { max: cfg.tolerances.averaging_sup }),
        );
    }
    let monotone = sups.windows(2).all(|w| w[1] < w[0]);
    rep.push(
        Row::new("monotone-decrease", if monotone { 1.0 } else { 0.0 }, Route::Measurement)
            .se(0.0)
            .gate_if(sups.len() > 1, Gate::AtLeast { min: 1.0 }),
    );
    Ok(rep)
}

/// Point at arclength `s` on the gradient line of `G` within the surface through `x0`.
pub fn transversal_point(sys: &SurfaceSystem, x0: &Vec3, s: f64) -> Result<Vec3> {
    let n = (s.abs() / 1e-3).ceil().max(1.0) as usize;
    let h = s / n as f64;
    let dir = |x: &Vec3| tangential_gradient(sys, x).normalize();
    let mut x = *x0;
    for _ in 0..n {
        let k1 = dir(&x);
        let k2 = dir(&(x + k1 * (0.5 * h)));
        let k3 = dir(&(x + k2 * (0.5 * h)));
        let k4 = dir(&(x + k3 * h));
        x = project_to_level(&sys.f, sys.level, &(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)), 1e-14, 50)?;
    }
    Ok(x)
}

/// Ribbon widths along the transversal through the base point, located by
/// bisection on the entered well.
pub fn run_ribbon_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let base = cfg.system.resolve()?;
    let graph = ReebGraph::build(&base)?;
    let br = branching_probabilities(&base, &graph)?;
    let (w1, w3) = lower_pair(&br.p)?;
    let (ratio_theory, route) = if cfg.system.is_symmetric() {
        (1.0, Route::Symmetry)
    } else {
        (br.surface_integrals[&w1] / br.surface_integrals[&w3], Route::SurfaceIntegral)
    };
    let x0 = base.base_point;
    let (k0, g0) = graph.classify_point(&base, &x0)?;
    // G-drop per loop through the base point, over ε
    let drop = line_coefficients(&base, &graph, k0, g0, &TraceOptions::default())?.a.abs();
    let slope_g = tangential_gradient(&base, &x0).norm();
    let mut icfg = integrator(cfg);
    icfg.record_every = usize::MAX;
    let mut rep = StatReport::new(ExperimentKind::Ribbon, cfg.seed);
    let mut widths: Vec<(f64, f64, f64)> = Vec::new();
    let last = *cfg.eps.last().unwrap();
    for &eps in &cfg.eps {
        let sys = base.clone().with_epsilon(eps);
        let outcome = |s: f64| -> Result<usize> {
            let x = transversal_point(&sys, &x0, s)?;
            let traj = integrate_slow(&sys, &x, opts.t_max, &icfg, Watch::wells(&graph))?;
            traj.entered_well()
                .ok_or_else(|| Error::Config(format!("ribbon scan point s={s:e} reached no well (bisection ambiguity)")))
        };
        let step = eps * drop / slope_g / opts.ribbon_resolution as f64;
        let n = (opts.ribbon_periods * opts.ribbon_resolution as f64).ceil() as usize;
        let scan: Vec<usize> = (0..=n).into_par_iter().map(|j| outcome(j as f64 * step)).collect::<Result<_>>()?;
        let changes: Vec<usize> = (0..n).filter(|&j| scan[j] != scan[j + 1]).take(3).collect();
        if changes.len() < 3 {
            return Err(Error::Config(format!(
                "ribbon scan at eps={eps:e} found {} outcome changes, need 3",
                changes.len()
            )));
        }
        let bounds: Vec<f64> = changes
            .par_iter()
            .map(|&j| {
                let (mut lo, mut hi) = (j as f64 * step, (j + 1) as f64 * step);
                let left = scan[j];
                while hi - lo > 1e-4 * step {
                    let mid = 0.5 * (lo + hi);
                    if outcome(mid)? == left {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            })
            .collect::<Result<_>>()?;
        let (a, b, c) = (bounds[0], bounds[1], bounds[2]);
        let first = scan[changes[0] + 1];
        let (l1, l3) = if first == w1 { (b - a, c - b) } else { (c - b, b - a) };
        widths.push((eps, l1, l3));
        for (i, s) in [a, b, c].iter().enumerate() {
            rep.records.push(RunRecord {
                cell: format!("eps={eps:e}"),
                run: i,
                outcome: Some(scan[changes[i]]),
                time: f64::NAN,
                value: *s,
            });
        }
        for (edge, w) in [(w1, l1), (w3, l3)] {
            rep.push(
                Row::new("ribbon-width", w, Route::Measurement)
                    .param("eps", eps)
                    .param("edge", edge as f64)
                    .param("width_over_eps", w / eps)
                    .se(0.0),
            );
        }
        rep.push(
            Row::new("ribbon-ratio", l1 / l3, route)
                .param("eps", eps)
                .param("edge", w1 as f64)
                .se(0.0)
                .theory(ratio_theory)
                .gate_if(eps == last, Gate::Relative { tol: tol.relative }),
        );
    }
    let errors: Vec<f64> = widths.iter().map(|w| (w.1 / w.2 - ratio_theory).abs()).collect();
    rep.push(
        Row::new("ratio-error-decreasing", if errors.windows(2).all(|w| w[1] <= w[0]) { 1.0 } else { 0.0 }, Route::Measurement)
            .se(0.0),
    );
    if widths.len() > 1 {
        let le: Vec<f64> = widths.iter().map(|w| w.0.ln()).collect();
        for (edge, pick) in [(w1, 1usize), (w3, 2usize)] {
            let lw: Vec<f64> = widths.iter().map(|w| if pick == 1 { w.1 } else { w.2 }.ln()).collect();
            let fit = linear_fit(&le, &lw);
            rep.push(
                Row::new("width-exponent", fit.slope, Route::Regression)
                    .param("edge", edge as f64)
                    .se(fit.slope_se)
                    .theory(1.0)
                    .gate(Gate::Absolute { tol: tol.slope }),
            );
        }
    }
    Ok(rep)
}

/// Time and `G` at the first return of the slow flow to the section through
/// `start` orthogonal to the fast field, within `max_fast_time` fast-time units.
pub fn rotation_time(sys: &SurfaceSystem, start: &Vec3, step: f64, max_fast_time: f64) -> Result<Option<(f64, f64)>> {
    let cfg = crate::flow::IntegratorConfig {
        step,
        tol_f: 1e-13,
        ..Default::default()
    };
    let stepper = Stepper::new(sys, &cfg);
    let v = fast_field(sys, start).normalize();
    let leave = 0.2;
    let mut left = false;
    let mut x = *start;
    let mut t = 0.0;
    let steps = (max_fast_time / step).ceil() as usize;
    for _ in 0..steps {
        let y = stepper.step(&x)?;
        t += stepper.dt;
        let d = (y - start).norm().min((x - start).norm());
        if !left {
            left = d > leave;
        } else if d < leave {
            let (s0, s1) = ((x - start).dot(&v), (y - start).dot(&v));
            if s0 < 0.0 && s1 >= 0.0 {
                let f = -s0 / (s1 - s0);
                let g = sys.g.value(&x) * (1.0 - f) + sys.g.value(&y) * f;
                return Ok(Some((t - stepper.dt * (1.0 - f), g)));
            }
        }
        x = y;
    }
    Ok(None)
}

/// Loop times and per-loop drops of `G` above the saddle.
pub fn run_rotation_diagnostics(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let base = cfg.system.resolve()?;
    let graph = ReebGraph::build(&base)?;
    let (saddle, gs) = saddle_level(&graph)?;
    let k = upper_edge(&graph, saddle)?;
    let xs = graph.vertices[saddle].critical.as_ref().ok_or(Error::NoSaddle)?.x;
    let trace = TraceOptions::default();
    let guide = graph.trace(&base, k, gs + 1e-2, &[], &trace)?;
    let far = guide
        .points
        .iter()
        .max_by(|a, b| (*a - xs).norm().partial_cmp(&(*b - xs).norm()).unwrap())
        .copied()
        .ok_or(Error::Missing("level curve points"))?;
    let start_at = |h: f64| project_to_curve(&base.f, base.level, &base.g, gs + h, &far);
    let max_fast = 1e4;

    let mut levels: Vec<(f64, bool)> = opts.rotation_levels.iter().map(|&h| (h, false)).collect();
    levels.extend(opts.far_levels.iter().map(|&h| (h, true)));
    let mut rep = StatReport::new(ExperimentKind::Rotation, cfg.seed);
    // (eps, h, far, t/ε, ΔG/ε)
    let mut results: Vec<(f64, f64, bool, f64, f64)> = Vec::new();
    for &eps in &cfg.eps {
        let sys = base.clone().with_epsilon(eps);
        let rows: Vec<(f64, bool, f64, f64)> = levels
            .par_iter()
            .map(|&(h, far)| {
                let x = start_at(h)?;
                let g = sys.g.value(&x);
                let (t, g1) = rotation_time(&sys, &x, opts.step, max_fast)?
                    .ok_or_else(|| Error::Config(format!("no return within {max_fast} fast-time units at h={h:e}")))?;
                Ok((h, far, t / eps, (g - g1) / eps))
            })
            .collect::<Result<_>>()?;
        for (i, r) in rows.iter().enumerate() {
            rep.records.push(RunRecord {
                cell: format!("eps={eps:e}"),
                run: i,
                outcome: Some(k),
                time: r.2,
                value: r.3,
            });
            results.push((eps, r.0, r.1, r.2, r.3));
        }
    }
    let eps_fine = *cfg.eps.last().unwrap();
    let eps_coarse = cfg.eps[0];
    let near: Vec<&(f64, f64, bool, f64, f64)> = results.iter().filter(|r| r.0 == eps_fine && !r.2).collect();
    if near.len() >= 3 {
        let x: Vec<f64> = near.iter().map(|r| r.1.ln().abs()).collect();
        let y: Vec<f64> = near.iter().map(|r| r.3).collect();
        let fit = linear_fit(&x, &y);
        rep.push(Row::new("rotation-fit-c0", fit.intercept, Route::Regression).param("eps", eps_fine).se(0.0));
        rep.push(Row::new("rotation-fit-c1", fit.slope, Route::Regression).param("eps", eps_fine).se(fit.slope_se));
        rep.push(
            Row::new("rotation-fit-r2", fit.r2, Route::Regression)
                .param("eps", eps_fine)
                .n(near.len())
                .se(0.0)
                .gate(Gate::AtLeast { min: tol.r_squared }),
        );
    }
    for r in results.iter().filter(|r| r.0 == eps_fine) {
        let g = gs + r.1;
        let mut row = Row::new(if r.2 { "far-rotation" } else { "rotation" }, r.3, Route::LevelCurvePeriod)
            .param("eps", eps_fine)
            .param("h", r.1)
            .se(0.0);
        if r.2 {
            let period = graph.trace(&base, k, g, &[], &trace)?.period;
            row = row.theory(period).gate(Gate::Relative { tol: tol.relative });
        }
        rep.push(row);
        if let Some(c) = results.iter().find(|c| c.0 == eps_coarse && c.1 == r.1) {
            rep.push(
                Row::new("loop-drop", r.4, Route::Measurement)
                    .param("eps", eps_fine)
                    .param("h", r.1)
                    .se(0.0)
                    .theory(c.4)
                    .gate_if(eps_coarse != eps_fine, Gate::Relative { tol: tol.relative }),
            );
        }
        if r.1 >= 1e-4 {
            if let Ok(lc) = line_coefficients(&base, &graph, k, g, &trace) {
                rep.push(
                    Row::new("loop-drop-line", r.4, Route::LineIntegral)
                        .param("eps", eps_fine)
                        .param("h", r.1)
                        .se(0.0)
                        .theory(lc.a.abs()),
                );
            }
        }
    }
    Ok(rep)
}
