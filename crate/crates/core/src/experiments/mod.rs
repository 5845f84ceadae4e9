//! Monte Carlo experiments comparing full 3-D runs with the averaged theory.

mod config;
mod holding;
mod meta;
mod report;
mod sde;
mod sphere;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

pub use config::{
    load_system, rescaled_projection, ExperimentConfig, ExperimentKind, ExperimentOptions, SystemRef, Tolerances,
};
pub use holding::run_torus_experiment;
pub use meta::{horizon_delta, run_metastability_experiment};
pub use report::{Gate, Route, Row, RunRecord, StatReport};
pub use sde::{run_gluing_experiment, run_sde_branching_experiment, saddle_exit};
pub use sphere::{
    hitting_time, rotation_time, run_averaging_experiment, run_branching_experiment, run_ribbon_experiment,
    run_rotation_diagnostics, transversal_point,
};

use crate::error::{Error, Result};
use crate::flow::{stream_rng, IntegratorConfig};

/// Runs the experiment named by `cfg.kind`.
pub fn run(cfg: &ExperimentConfig) -> Result<StatReport> {
    match cfg.kind {
        ExperimentKind::Branching => run_branching_experiment(cfg),
        ExperimentKind::Averaging => run_averaging_experiment(cfg),
        ExperimentKind::Ribbon => run_ribbon_experiment(cfg),
        ExperimentKind::SdeBranching => run_sde_branching_experiment(cfg),
        ExperimentKind::Gluing => run_gluing_experiment(cfg),
        ExperimentKind::Metastability => run_metastability_experiment(cfg),
        ExperimentKind::Rotation => run_rotation_diagnostics(cfg),
        ExperimentKind::Torus => run_torus_experiment(cfg),
    }
}

fn integrator(cfg: &ExperimentConfig) -> IntegratorConfig {
    IntegratorConfig {
        step: cfg.options.step,
        seed: cfg.seed,
        well_depth: cfg.options.well_depth,
        ..IntegratorConfig::default()
    }
}

/// Random stream of run `run` in cell `cell`.
fn stream(seed: u64, cell: usize, run: usize) -> ChaCha8Rng {
    stream_rng(seed, ((cell as u64) << 32) | run as u64)
}

/// The two lower edges of the saddle, in key order.
fn lower_pair(p: &BTreeMap<usize, f64>) -> Result<(usize, usize)> {
    let keys: Vec<usize> = p.keys().copied().collect();
    match keys[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("expected two wells below the saddle, found {}", keys.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_pair_takes_key_order() {
        let p: BTreeMap<usize, f64> = [(3, 0.7), (1, 0.3)].into();
        assert_eq!(lower_pair(&p).unwrap(), (1, 3));
        let one: BTreeMap<usize, f64> = [(1, 1.0)].into();
        assert!(lower_pair(&one).is_err());
    }

    #[test]
    fn small_gluing_run_is_reproducible() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Gluing).with_runs(200);
        cfg.options.vertex_radii = vec![2.5e-3];
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.rows.len(), 4);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.estimate, y.estimate);
        }
        assert_eq!(a.records.len(), 200);
    }
}
