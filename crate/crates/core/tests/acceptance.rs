//! Acceptance criteria of the library, one test and one PASS/FAIL line each.
//!
//! Tolerances and sample sizes are pinned here and do not follow the library
//! defaults. Runs without the libtest harness; positional arguments filter
//! criteria by name.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slowfast::averaging::saddle_data;
use slowfast::experiments::{
    rescaled_projection, run, ExperimentConfig, ExperimentKind, Gate, Row, StatReport, SystemRef, Tolerances,
};
use slowfast::flow::{integrate_sde, integrate_slow, stream_rng, IntegratorConfig, Stepper, Watch};
use slowfast::geometry::{damping_field, divergence_check, divergence_scale, fast_field};
use slowfast::levelsets::ReebGraph;
use slowfast::torus::TorusSystem;
use slowfast::{NoiseMap, Perturbation, SmoothField, SurfaceSystem, Vec3, VectorFieldSpec};

const SEED: u64 = 2024;
const SIGMA: f64 = 3.0;
const IDENTITY_POINTS: usize = 1000;
const IDENTITY_REL: f64 = 1e-10;
const DIVERGENCE_REL: f64 = 1e-8;
const NORMAL_NOISE_ABS: f64 = 1e-12;
const CONSERVATION_ABS: f64 = 1e-9;
const AVERAGING_SUP: f64 = 0.02;
const ROUTE_AGREEMENT: f64 = 0.01;
const RIBBON_RATIO_REL: f64 = 0.05;
const WIDTH_SLOPE_ABS: f64 = 0.1;
const ADDITIVITY_REL: f64 = 0.01;
const CONCENTRATION: f64 = 0.9;
const LAMBDA_STABILITY: f64 = 0.01;
const TRANSITION_REL: f64 = 0.15;
const P_VALUE: f64 = 0.01;
const HOLDING_REL: f64 = 0.25;

fn pinned() -> Tolerances {
    Tolerances {
        sigma: SIGMA,
        relative: 0.05,
        route_agreement: ROUTE_AGREEMENT,
        hitting_time: 0.02,
        averaging_sup: AVERAGING_SUP,
        slope: WIDTH_SLOPE_ABS,
        r_squared: 0.95,
        additivity: ADDITIVITY_REL,
        beta_change: 0.01,
        concentration: CONCENTRATION,
        lambda_stability: LAMBDA_STABILITY,
        transition_exponent: TRANSITION_REL,
        p_value: P_VALUE,
        holding_mean: HOLDING_REL,
    }
}

fn config(kind: ExperimentKind, n_runs: usize, eps: &[f64], delta: &[f64]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(kind);
    cfg.n_runs = n_runs;
    cfg.eps = eps.to_vec();
    cfg.delta = delta.to_vec();
    cfg.seed = SEED;
    cfg.tolerances = pinned();
    cfg
}

fn run_checked(cfg: &ExperimentConfig) -> StatReport {
    let rep = run(cfg).expect("experiment runs");
    eprint!("{}", rep.text());
    rep
}

static CRITERION_FAILED: AtomicBool = AtomicBool::new(false);

/// Prints the criterion line and records a failure if any check failed.
fn verdict(n: usize, name: &str, checks: &[(String, bool)]) {
    let ok = checks.iter().all(|c| c.1);
    for (what, pass) in checks {
        eprintln!("  {} {what}", if *pass { "ok  " } else { "fail" });
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let detail = if ok { format!("{} checks", checks.len()) } else { format!("failed: {}", failed.join("; ")) };
    println!("{} criterion {n} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        CRITERION_FAILED.store(true, Ordering::SeqCst);
    }
}

fn gated(r: &Row) -> (String, bool) {
    let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    (
        format!("{} [{}] est {:.6} theory {:?}", r.label, params.join(","), r.estimate, r.theory),
        r.pass == Some(true),
    )
}

fn row<'a>(rep: &'a StatReport, label: &str, params: &[(&str, f64)]) -> &'a Row {
    rep.find(label, params).unwrap_or_else(|| panic!("no row {label} {params:?}"))
}

fn binomial_within(k: f64, n: f64, p: f64) -> bool {
    (k / n - p).abs() <= SIGMA * (p * (1.0 - p) / n).sqrt()
}

fn random_poly(rng: &mut ChaCha8Rng, degree: u32, terms: usize) -> SmoothField {
    let t: Vec<(f64, [u32; 3])> = (0..terms)
        .map(|_| {
            let a = rng.random_range(0..=degree);
            let b = rng.random_range(0..=degree - a);
            let c = rng.random_range(0..=degree - a - b);
            (rng.random_range(-1.0..1.0), [a, b, c])
        })
        .collect();
    SmoothField::polynomial(&t)
}

fn random_linear(rng: &mut ChaCha8Rng) -> VectorFieldSpec {
    let mut m = [[0.0; 3]; 3];
    for row in &mut m {
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    VectorFieldSpec::Linear {
        matrix: m,
        offset: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
    }
}

fn on_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn criterion_1_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let base = SurfaceSystem::sphere_double_well(0.1);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..IDENTITY_POINTS {
        let b = if rng.random_bool(0.5) {
            random_linear(&mut rng)
        } else {
            VectorFieldSpec::gradient_of(random_poly(&mut rng, 3, 5))
        };
        let sys = base.clone().with_perturbation(Perturbation::Damping { b: b.clone() });
        let x = on_sphere(&mut rng) * rng.random_range(0.5..1.5);
        let gf = sys.f.gradient(&x);
        let lhs = sys.g.gradient(&x).dot(&damping_field(&sys, &x).unwrap());
        let rhs = -gf.cross(&b.value(&x)).dot(&fast_field(&sys, &x));
        let scale = gf.norm().powi(2) * sys.g.gradient(&x).norm() * b.value(&x).norm();
        worst = worst.max((lhs - rhs).abs() / scale.max(1e-300));
    }
    checks.push((format!("damping identity worst {worst:.2e}"), worst < IDENTITY_REL));

    let mut worst = 0.0f64;
    for i in 0..IDENTITY_POINTS {
        let sys = if i % 2 == 0 {
            base.clone()
        } else {
            let mut s = base.clone();
            s.f = random_poly(&mut rng, 3, 6);
            s.g = random_poly(&mut rng, 3, 6);
            s
        };
        let x = on_sphere(&mut rng) * rng.random_range(0.5..1.5);
        worst = worst.max(divergence_check(&sys, &x).abs() / divergence_scale(&sys, &x));
    }
    checks.push((format!("fast field divergence worst {worst:.2e}"), worst < DIVERGENCE_REL));

    let mut worst = 0.0f64;
    for noise in [NoiseMap::tangent_projection(), rescaled_projection()] {
        for _ in 0..IDENTITY_POINTS {
            let x = on_sphere(&mut rng);
            let s = noise.sigma(&base.f, &x);
            worst = worst.max((s.transpose() * base.f.gradient(&x)).norm());
        }
    }
    checks.push((format!("noise normal component worst {worst:.2e}"), worst < NORMAL_NOISE_ABS));

    let graph = ReebGraph::build(&base).unwrap();
    let cfg = IntegratorConfig::default();
    let mut worst = 0.0f64;
    for i in 0..IDENTITY_POINTS {
        let eps = 10f64.powf(rng.random_range(-3.0..-1.5));
        let sys = base.clone().with_epsilon(eps).with_delta(0.2);
        let x0 = on_sphere(&mut rng);
        let traj = if i % 2 == 0 {
            integrate_slow(&sys, &x0, 0.02, &cfg, Watch::wells(&graph)).unwrap()
        } else {
            let mut r = stream_rng(SEED, i as u64);
            integrate_sde(&sys, &x0, 0.02, &cfg, Watch::wells(&graph), &mut r).unwrap()
        };
        for s in &traj.samples {
            worst = worst.max((sys.f.value(&Vec3::from(s.x)) - sys.level).abs());
        }
    }
    checks.push((format!("sphere F drift worst {worst:.2e}"), worst < CONSERVATION_ABS));

    let torus = TorusSystem::canonical().with_epsilon(1e-2).with_delta(0.1);
    let stepper = Stepper::new(&torus, &cfg);
    let mut worst = 0.0f64;
    for _ in 0..IDENTITY_POINTS {
        let mut x = torus
            .point_at(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU))
            .unwrap();
        for k in 0..20 {
            x = if k % 2 == 0 { stepper.step(&x).unwrap() } else { stepper.step_sde(&x, &mut rng).unwrap() };
            worst = worst.max((torus.f.value(&x) - torus.level).abs());
        }
    }
    checks.push((format!("torus F drift worst {worst:.2e}"), worst < CONSERVATION_ABS));
    verdict(1, "identity suite", &checks);
}

fn criterion_2_averaging() {
    let cfg = config(ExperimentKind::Averaging, 1, &[4e-3, 2e-3, 1e-3], &[]);
    let rep = run_checked(&cfg);
    let sups: Vec<&Row> = rep.rows_labeled("sup-deviation").collect();
    assert_eq!(sups.len(), 3);
    let mut checks: Vec<(String, bool)> = sups
        .windows(2)
        .map(|w| (format!("sup {:.5} then {:.5}", w[0].estimate, w[1].estimate), w[1].estimate < w[0].estimate))
        .collect();
    let last = sups[2];
    checks.push((format!("sup at eps=1e-3 is {:.5}", last.estimate), last.estimate < AVERAGING_SUP));
    verdict(2, "averaging convergence", &checks);
}

fn criterion_3_branching() {
    let mut sym = config(ExperimentKind::Branching, 2000, &[1e-3], &[0.05]);
    sym.system = SystemRef::SphereDoubleWell { asymmetry: 0.0 };
    let rep_sym = run_checked(&sym);
    let asym = config(ExperimentKind::Branching, 2000, &[1e-3], &[0.05]);
    let rep = run_checked(&asym);

    let mut checks = Vec::new();
    let w = row(&rep_sym, "well-fraction", &[]);
    checks.push((
        format!("symmetric fraction {:.4} vs 1/2", w.estimate),
        binomial_within(w.estimate * w.n as f64, w.n as f64, 0.5),
    ));
    let sys = asym.system.resolve().unwrap();
    let graph = ReebGraph::build(&sys).unwrap();
    let br = saddle_data(&sys, &graph).unwrap().branching.unwrap();
    let k = *br.p.keys().next().unwrap();
    let s: f64 = br.surface_integrals.values().sum();
    let p_surface = br.surface_integrals[&k] / s;
    let l: f64 = br.line_limits.values().sum();
    let p_line = br.line_limits[&k] / l;
    checks.push((
        format!("routes {p_line:.6} vs {p_surface:.6}"),
        (p_line - p_surface).abs() <= ROUTE_AGREEMENT * p_surface,
    ));
    let w = row(&rep, "well-fraction", &[("edge", k as f64)]);
    checks.push((
        format!("asymmetric fraction {:.4} vs {p_surface:.4}", w.estimate),
        binomial_within(w.estimate * w.n as f64, w.n as f64, p_surface),
    ));
    verdict(3, "branching probabilities", &checks);
}

fn criterion_4_ribbons() {
    let cfg = config(ExperimentKind::Ribbon, 1, &[4e-3, 2e-3, 1e-3], &[]);
    let rep = run_checked(&cfg);
    let mut checks = Vec::new();
    let r = rep
        .rows_labeled("ribbon-ratio")
        .find(|r| r.has("eps", 1e-3))
        .expect("ratio at eps=1e-3");
    let theory = r.theory.unwrap();
    checks.push((
        format!("ratio {:.5} vs {theory:.5}", r.estimate),
        (r.estimate - theory).abs() <= RIBBON_RATIO_REL * theory,
    ));
    for s in rep.rows_labeled("width-exponent") {
        checks.push((format!("width slope {:.4}", s.estimate), (s.estimate - 1.0).abs() <= WIDTH_SLOPE_ABS));
    }
    verdict(4, "ribbon ratio", &checks);
}

fn criterion_5_gluing() {
    let mut cfg = config(ExperimentKind::Gluing, 10_000, &[1e-3], &[1.0]);
    cfg.options.vertex_radii = vec![2.5e-3, 1.25e-3, 6.25e-4];
    let rep = run_checked(&cfg);
    let sys = cfg.system.resolve().unwrap();
    let graph = ReebGraph::build(&sys).unwrap();
    let sd = saddle_data(&sys, &graph).unwrap();
    let upper = sd.incident.iter().find(|p| p.1).unwrap().0;
    let lower: f64 = sd.incident.iter().filter(|p| !p.1).map(|p| sd.beta[&p.0]).sum();
    let mut checks = vec![(
        format!("beta upper {:.5} vs lower sum {lower:.5}", sd.beta[&upper]),
        (sd.beta[&upper] - lower).abs() <= ADDITIVITY_REL * sd.beta[&upper],
    )];
    let total: f64 = sd.beta.values().sum();
    for &inner in &cfg.options.vertex_radii {
        for &(k, _) in &sd.incident {
            let q = sd.beta[&k] / total;
            let r = row(&rep, "exit-frequency", &[("inner", inner), ("edge", k as f64)]);
            checks.push((
                format!("h={inner} edge {k}: {:.4} vs {q:.4}", r.estimate),
                binomial_within(r.estimate * r.n as f64, r.n as f64, q),
            ));
        }
    }
    verdict(5, "gluing and exit law", &checks);
}

fn sde_report() -> &'static StatReport {
    static REPORT: OnceLock<StatReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let mut cfg = config(ExperimentKind::SdeBranching, 600, &[1e-4], &[0.2, 0.1, 0.05]);
        cfg.options.exit_delta = 0.2;
        cfg.options.exit_runs = 1000;
        cfg.options.noises = vec![NoiseMap::tangent_projection(), rescaled_projection()];
        run_checked(&cfg)
    })
}

fn criterion_6_sde_vertex_exit() {
    let rep = sde_report();
    let checks: Vec<(String, bool)> = rep
        .rows_labeled("vertex-exit")
        .filter(|r| r.has("noise", 0.0))
        .map(|r| {
            assert!(matches!(r.gate, Some(Gate::Sigma { k }) if k == SIGMA));
            assert_eq!(r.n, 1000);
            gated(r)
        })
        .collect();
    assert_eq!(checks.len(), 3);
    verdict(6, "3-D vertex exit", &checks);
}

fn criterion_7_noise_independence() {
    let rep = sde_report();
    let mut checks = Vec::new();
    let change = row(rep, "beta-change", &[]);
    checks.push((format!("largest beta change {:.3}", change.estimate), change.estimate >= 0.01));
    for noise in [0.0, 1.0] {
        let r = row(rep, "well-fraction", &[("noise", noise), ("delta", 0.05)]);
        let p = r.theory.unwrap();
        checks.push((
            format!("noise {noise} fraction {:.4} vs {p:.4} at delta=0.05", r.estimate),
            binomial_within(r.estimate * r.n as f64, r.n as f64, p),
        ));
    }
    verdict(7, "small-noise independence of the diffusion", &checks);
}

fn criterion_8_metastability() {
    let mut cfg = config(ExperimentKind::Metastability, 400, &[1e-3], &[]);
    cfg.options.transition_deltas = vec![0.5, 0.4, 0.3];
    let rep = run_checked(&cfg);
    let mut checks = Vec::new();
    for r in rep.rows_labeled("lambda-refinement") {
        let t = r.theory.unwrap();
        checks.push((
            format!("lambda {t:.6} refined {:.6}", r.estimate),
            (r.estimate - t).abs() <= LAMBDA_STABILITY * t,
        ));
    }
    for r in rep.rows_labeled("concentration") {
        checks.push((format!("case {} concentration {:.3}", r.params["case"], r.estimate), r.estimate >= CONCENTRATION));
    }
    for r in rep.rows_labeled("mixture") {
        let p = r.theory.unwrap();
        checks.push((
            format!("mixture edge {} {:.4} vs {p:.4}", r.params["edge"], r.estimate),
            binomial_within(r.estimate * r.n as f64, r.n as f64, p),
        ));
    }
    let t = row(&rep, "transition-exponent", &[]);
    let l = t.theory.unwrap();
    checks.push((
        format!("extrapolated delta^2 ln tau {:.4} vs lambda {l:.4}", t.estimate),
        (t.estimate - l).abs() <= TRANSITION_REL * l,
    ));
    verdict(8, "metastability", &checks);
}

fn criterion_9_torus() {
    let cfg = config(ExperimentKind::Torus, 240, &[1e-3], &[0.1]);
    let rep = run_checked(&cfg);
    let mut checks = Vec::new();
    let inv = row(&rep, "invariant-p-value", &[]);
    checks.push((format!("invariant density p {:.4}", inv.estimate), inv.estimate > P_VALUE));
    let ks = row(&rep, "limit-holding-ks", &[]);
    checks.push((format!("holding KS p {:.4}", ks.estimate), ks.estimate > P_VALUE));
    let h = row(&rep, "holding-mean", &[]);
    let t = h.theory.unwrap();
    checks.push((
        format!("holding mean {:.4} vs {t:.4}", h.estimate),
        (h.estimate - t).abs() <= HOLDING_REL * t,
    ));
    let o = row(&rep, "rate-ordering", &[]);
    checks.push(("rate ordering".to_string(), o.estimate == 1.0));
    verdict(9, "torus", &checks);
}

type Criterion = (&'static str, fn());

fn main() {
    let criteria: [Criterion; 9] = [
        ("criterion_1_identities", criterion_1_identities),
        ("criterion_2_averaging", criterion_2_averaging),
        ("criterion_3_branching", criterion_3_branching),
        ("criterion_4_ribbons", criterion_4_ribbons),
        ("criterion_5_gluing", criterion_5_gluing),
        ("criterion_6_sde_vertex_exit", criterion_6_sde_vertex_exit),
        ("criterion_7_noise_independence", criterion_7_noise_independence),
        ("criterion_8_metastability", criterion_8_metastability),
        ("criterion_9_torus", criterion_9_torus),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let start = std::time::Instant::now();
        CRITERION_FAILED.store(false, Ordering::SeqCst);
        if std::panic::catch_unwind(f).is_err() {
            println!("FAIL {name}: aborted");
            failed.push(name);
        } else if CRITERION_FAILED.load(Ordering::SeqCst) {
            failed.push(name);
        }
        eprintln!("  {name} took {:.1}s", start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
