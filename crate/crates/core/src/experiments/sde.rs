use rayon::prelude::*;

use super::{integrator, lower_pair, stream, ExperimentConfig, ExperimentKind, Gate, Route, Row, RunRecord, StatReport};
use crate::averaging::{saddle_data, EdgeCoefficients, SaddleData};
use crate::error::{Error, Result};
use crate::flow::{integrate_sde, Stepper, Watch};
use crate::geometry::SurfaceSystem;
use crate::graphproc::{GraphSimConfig, Walker};
use crate::levelsets::{ReebGraph, TraceOptions};

/// First exit of the 3-D diffusion started at the saddle point from the band
/// `|G - g_s| < h`, classified by edge; `None` if `t_max` passes first.
pub fn saddle_exit<R: rand::Rng + ?Sized>(
    sys: &SurfaceSystem,
    graph: &ReebGraph,
    saddle: &SaddleData,
    h: f64,
    t_max: f64,
    cfg: &crate::flow::IntegratorConfig,
    rng: &mut R,
) -> Result<(Option<usize>, f64)> {
    let v = &graph.vertices[saddle.vertex];
    let mut x = v.critical.as_ref().ok_or(Error::NoSaddle)?.x;
    let upper = saddle.incident.iter().find(|p| p.1).map(|p| p.0).ok_or(Error::NoSaddle)?;
    let stepper = Stepper::new(sys, cfg);
    let mut t = 0.0;
    while t < t_max {
        x = stepper.step_sde(&x, rng)?;
        t += stepper.dt;
        let g = sys.g.value(&x);
        if g - saddle.g >= h {
            return Ok((Some(upper), t));
        }
        if saddle.g - g >= h {
            return Ok((Some(graph.classify_point(sys, &x)?.0), t));
        }
    }
    Ok((None, t))
}

/// Vertex exit frequencies of the full SDE at one noise level and well
/// fractions along the δ list, for each noise map.
pub fn run_sde_branching_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let base = cfg.system.resolve()?;
    let graph = ReebGraph::build(&base)?;
    let eps = cfg.eps[0];
    let mut rep = StatReport::new(ExperimentKind::SdeBranching, cfg.seed);
    let mut betas: Vec<SaddleData> = Vec::new();
    let icfg = crate::flow::IntegratorConfig {
        tol_f: 1e-6,
        ..integrator(cfg)
    };
    let delta_min = cfg.delta.iter().copied().fold(f64::INFINITY, f64::min);
    for (ni, noise) in cfg.options.noises.iter().enumerate() {
        let sys = base.clone().with_noise(Some(noise.clone())).with_epsilon(eps);
        let sd = saddle_data(&sys, &graph)?;
        let br = sd.branching.clone().ok_or(Error::Missing("branching probabilities"))?;
        let (w1, w3) = lower_pair(&br.p)?;
        let upper = sd.incident.iter().find(|p| p.1).map(|p| p.0).ok_or(Error::NoSaddle)?;
        let symmetric = cfg.system.is_symmetric();
        let (p1, p_route) = if symmetric { (0.5, Route::Symmetry) } else { (br.p[&w1], Route::SurfaceIntegral) };
        for (&k, &b) in &sd.beta {
            rep.push(Row::new("beta", b, Route::GluingWeights).param("noise", ni as f64).param("edge", k as f64).se(0.0));
        }

        // vertex exit
        let h = opts.exit_band * opts.exit_delta * opts.exit_delta;
        let exit_sys = sys.clone().with_delta(opts.exit_delta);
        let cell = 2 * ni * (cfg.delta.len() + 1);
        let exits: Vec<(Option<usize>, f64)> = (0..opts.exit_runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(cfg.seed, cell, i);
                saddle_exit(&exit_sys, &graph, &sd, h, opts.t_max, &icfg, &mut rng)
            })
            .collect::<Result<_>>()?;
        let done = exits.iter().filter(|e| e.0.is_some()).count();
        for (i, e) in exits.iter().enumerate() {
            rep.records.push(RunRecord {
                cell: format!("exit noise={ni}"),
                run: i,
                outcome: e.0,
                time: e.1,
                value: h,
            });
        }
        for &(k, _) in &sd.incident {
            let c = exits.iter().filter(|e| e.0 == Some(k)).count();
            rep.push(
                Row::fraction("vertex-exit", c, done, sd.q[&k], Route::GluingWeights)
                    .param("noise", ni as f64)
                    .param("edge", k as f64)
                    .param("delta", opts.exit_delta)
                    .param("eps", eps)
                    .param("h", h)
                    .gate(Gate::Sigma { k: tol.sigma }),
            );
        }

        // well fractions along δ
        let q_low = sd.q[&w1] / (sd.q[&w1] + sd.q[&w3]);
        for (di, &delta) in cfg.delta.iter().enumerate() {
            let eta = f64::max(1e-3, opts.start_band * delta * delta);
            let s = sys.clone().with_delta(delta);
            let x0 = graph.seed(&s, upper, sd.g + eta)?;
            let mut wcfg = icfg.clone();
            wcfg.well_depth = eta;
            wcfg.record_every = usize::MAX;
            let cell = cell + 1 + di;
            let runs: Vec<(Option<usize>, f64)> = (0..cfg.n_runs)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(cfg.seed, cell, i);
                    let traj = integrate_sde(&s, &x0, opts.t_max, &wcfg, Watch::wells(&graph), &mut rng)?;
                    let t = traj.events.first().map(|e| e.0).unwrap_or(f64::NAN);
                    Ok((traj.entered_well(), t))
                })
                .collect::<Result<_>>()?;
            for (i, r) in runs.iter().enumerate() {
                rep.records.push(RunRecord {
                    cell: format!("wells noise={ni} delta={delta}"),
                    run: i,
                    outcome: r.0,
                    time: r.1,
                    value: eta,
                });
            }
            let entered = runs.iter().filter(|r| r.0.is_some()).count();
            let k1 = runs.iter().filter(|r| r.0 == Some(w1)).count();
            let row = Row::fraction("well-fraction", k1, entered, p1, p_route)
                .param("noise", ni as f64)
                .param("delta", delta)
                .param("eps", eps)
                .param("edge", w1 as f64)
                .param("q_lower", q_low);
            let row = if delta == delta_min {
                row.gate(Gate::Sigma { k: tol.sigma })
            } else {
                let band = tol.sigma * row.se;
                row.gate(Gate::Within {
                    lo: p1.min(q_low) - band,
                    hi: p1.max(q_low) + band,
                })
            };
            rep.push(row);
        }
        betas.push(sd);
    }
    if betas.len() > 1 {
        let r = &betas[0];
        let change = betas[1..]
            .iter()
            .flat_map(|s| s.beta.iter().map(move |(k, b)| (b - r.beta[k]).abs() / r.beta[k]))
            .fold(0.0, f64::max);
        rep.push(
            Row::new("beta-change", change, Route::GluingWeights)
                .se(0.0)
                .gate(Gate::AtLeast { min: tol.beta_change }),
        );
    }
    Ok(rep)
}

/// Additivity of the gluing weights and exit frequencies of the graph diffusion
/// started at the vertex, for several inner radii of the vertex rule.
pub fn run_gluing_experiment(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let opts = &cfg.options;
    let sys = cfg.system.resolve()?;
    let graph = ReebGraph::build(&sys)?;
    let sd = saddle_data(&sys, &graph)?;
    let coeffs = EdgeCoefficients::tabulate(&sys, &graph, opts.grid, &TraceOptions::default())?;
    let upper = sd.incident.iter().find(|p| p.1).map(|p| p.0).ok_or(Error::NoSaddle)?;
    let lower_sum: f64 = sd.incident.iter().filter(|p| !p.1).map(|p| sd.beta[&p.0]).sum();
    let mut rep = StatReport::new(ExperimentKind::Gluing, cfg.seed);
    rep.push(
        Row::new("beta-additivity", sd.beta[&upper], Route::GluingWeights)
            .param("edge", upper as f64)
            .se(0.0)
            .theory(lower_sum)
            .gate(Gate::Relative { tol: tol.additivity }),
    );
    let delta = cfg.delta[0];
    let radius = opts.exit_radius;
    for (ri, &inner) in opts.vertex_radii.iter().enumerate() {
        if !(inner < radius) {
            return Err(Error::Config(format!("vertex radius {inner} must be below the exit radius {radius}")));
        }
        let gcfg = GraphSimConfig {
            h: inner,
            ..GraphSimConfig::default()
        };
        let runs: Vec<(usize, f64)> = (0..cfg.n_runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(cfg.seed, ri, i);
                let mut w = Walker::new(&coeffs, &graph, &sd, delta, gcfg, (upper, sd.g))?;
                loop {
                    w.step(&mut rng)?;
                    let e = graph.edge(w.edge);
                    let near = if e.lower == sd.vertex { w.g - sd.g } else { sd.g - w.g };
                    if near >= radius || w.stopped {
                        return Ok((w.edge, w.t));
                    }
                }
            })
            .collect::<Result<_>>()?;
        for (i, r) in runs.iter().enumerate() {
            rep.records.push(RunRecord {
                cell: format!("inner={inner}"),
                run: i,
                outcome: Some(r.0),
                time: r.1,
                value: inner,
            });
        }
        for &(k, _) in &sd.incident {
            let c = runs.iter().filter(|r| r.0 == k).count();
            rep.push(
                Row::fraction("exit-frequency", c, runs.len(), sd.q[&k], Route::GluingWeights)
                    .param("inner", inner)
                    .param("radius", radius)
                    .param("delta", delta)
                    .param("edge", k as f64)
                    .gate(Gate::Sigma { k: tol.sigma }),
            );
        }
    }
    Ok(rep)
}
