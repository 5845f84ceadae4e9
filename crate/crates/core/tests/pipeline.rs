use std::fs;

use slowfast::experiments::{load_system, run, ExperimentConfig, ExperimentKind, SystemRef};
use slowfast::SurfaceSystem;

#[test]
fn system_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sys = SurfaceSystem::sphere_double_well(0.1).with_epsilon(2e-3);
    let json = dir.path().join("sys.json");
    let toml_path = dir.path().join("sys.toml");
    fs::write(&json, serde_json::to_string(&sys).unwrap()).unwrap();
    fs::write(&toml_path, toml::to_string(&sys).unwrap()).unwrap();
    assert_eq!(load_system(&json).unwrap(), sys);
    assert_eq!(load_system(&toml_path).unwrap(), sys);
    let r = SystemRef::File { path: json };
    assert_eq!(r.resolve().unwrap(), sys);
    assert!(!r.is_symmetric());
}

#[test]
fn short_branching_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Branching).with_runs(40);
    cfg.seed = 11;
    let rep = run(&cfg).unwrap();
    assert_eq!(rep.records.len(), 40);
    rep.write_to_dir(dir.path()).unwrap();
    let runs = fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 40);
    let again = run(&cfg).unwrap();
    for (a, b) in rep.rows.iter().zip(&again.rows) {
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    }
    let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("route-agreement"));
}

#[test]
fn rotation_diagnostics_pass() {
    let rep = run(&ExperimentConfig::preset(ExperimentKind::Rotation)).unwrap();
    eprint!("{}", rep.text());
    assert!(rep.passed());
    let c1 = rep.find("rotation-fit-c1", &[]).unwrap();
    assert!(c1.estimate > 0.0);
}
