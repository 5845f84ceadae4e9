use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use slowfast::averaging::{metastable_thresholds, saddle_data, EdgeCoefficients};
use slowfast::experiments::{self, ExperimentConfig, ExperimentKind};
use slowfast::flow::{integrate_sde, integrate_slow, stream_rng, Watch};
use slowfast::graphproc::{simulate_graph_diffusion, simulate_limit_process, GraphSimConfig, GraphState};
use slowfast::levelsets::{ReebGraph, TraceOptions};
use slowfast::surface::QuadratureOptions;
use slowfast::torus::{
    invariant_measure_check, simulate_torus_limit, simulate_torus_sde, torus_rates, FastFlow, TorusSystem, ROOT,
};

#[derive(Parser, Debug)]
#[command(name = "slowfast", version, about = "Slow-fast perturbations of conservative flows on level surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment configuration (TOML); its system, seed and options are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; text goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one trajectory from the base point, deterministic or stochastic.
    Simulate {
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        /// Keep every n-th sample.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate the averaged coefficients, gluing data and Reeb graph.
    Coeffs {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the averaged process on the Reeb graph.
    Graphsim {
        /// Vertex neighborhood radius.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        /// Start edge; defaults to the edge through the base point.
        #[arg(long)]
        edge: Option<usize>,
        /// Start level; defaults to the level of the base point.
        #[arg(long)]
        g: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Well depths, exit exponents and the time-scale decision table.
    Metastable {
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
    /// The canonical torus system.
    Torus {
        #[command(subcommand)]
        action: TorusAction,
    },
    /// Run a statistical experiment and print its PASS/FAIL report.
    Experiment {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum TorusAction {
    /// Chi-square test of the time averages against the invariant density.
    InvariantCheck {
        #[arg(long, default_value_t = 1e4)]
        t_end: f64,
        #[arg(long, default_value_t = 6)]
        bins: usize,
        #[arg(long)]
        normalized: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Root-to-well rates of the limit process.
    Rates {
        #[command(flatten)]
        common: Common,
    },
    /// Paths of the limit process on the rooted graph.
    LimitSim {
        #[arg(long, default_value_t = 20.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-2)]
        dt: f64,
        #[command(flatten)]
        common: Common,
    },
    /// One 3-D trajectory with its projection onto the rooted graph.
    SdeSim {
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Text,
    Json,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    ExperimentKind::parse(s).map_err(|e| e.to_string())
}

impl Common {
    /// Configuration from `--config` or the preset of `kind`, with flags applied.
    fn resolve(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::preset(kind),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.runs {
            cfg.n_runs = n;
        }
        if let Some(e) = &self.eps {
            cfg.eps = e.clone();
        }
        if let Some(d) = &self.delta {
            cfg.delta = d.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writer for `name` inside the output directory, or stdout.
fn sink(out: &Option<PathBuf>, name: &str) -> Result<Box<dyn Write>> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let f = File::create(dir.join(name)).with_context(|| format!("creating {name}"))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn first(list: &[f64], what: &str) -> Result<f64> {
    list.first().copied().with_context(|| format!("{what} list is empty"))
}

fn simulate(common: &Common, t_end: f64, every: usize) -> Result<()> {
    let cfg = common.resolve(ExperimentKind::Branching)?;
    let eps = first(&cfg.eps, "eps")?;
    let delta = cfg.delta.first().copied().unwrap_or(0.0);
    let sys = cfg.system.resolve()?.with_epsilon(eps).with_delta(delta);
    let graph = ReebGraph::build(&sys)?;
    let icfg = slowfast::flow::IntegratorConfig {
        step: cfg.options.step,
        seed: cfg.seed,
        well_depth: cfg.options.well_depth,
        ..Default::default()
    };
    let x0 = sys.base_point;
    let traj = if delta > 0.0 {
        let mut rng = stream_rng(cfg.seed, 0);
        integrate_sde(&sys, &x0, t_end, &icfg, Watch::wells(&graph), &mut rng)?
    } else {
        integrate_slow(&sys, &x0, t_end, &icfg, Watch::wells(&graph))?
    };
    traj.write_jsonl(sink(&cfg.out, "trajectory.jsonl")?, every.max(1))?;
    if cfg.out.is_some() {
        let last = traj.last().map(|s| s.t).unwrap_or(0.0);
        println!("{} samples to t = {last:.6}, well {:?}", traj.samples.len(), traj.entered_well());
    }
    Ok(())
}

fn coeffs(common: &Common) -> Result<()> {
    let cfg = common.resolve(ExperimentKind::Branching)?;
    let sys = cfg.system.resolve()?;
    let graph = ReebGraph::build(&sys)?;
    let table = EdgeCoefficients::tabulate(&sys, &graph, cfg.options.grid, &TraceOptions::default())?;
    let sd = saddle_data(&sys, &graph)?;
    table.write_csv(sink(&cfg.out, "coefficients.csv")?)?;
    sd.write_csv(sink(&cfg.out, "saddle.csv")?)?;
    graph.write_csv(sink(&cfg.out, "graph.csv")?)?;
    Ok(())
}

fn graphsim(common: &Common, h: Option<f64>, t_end: f64, edge: Option<usize>, g: Option<f64>) -> Result<()> {
    let cfg = common.resolve(ExperimentKind::Metastability)?;
    let sys = cfg.system.resolve()?;
    let graph = ReebGraph::build(&sys)?;
    let table = EdgeCoefficients::tabulate(&sys, &graph, cfg.options.grid, &TraceOptions::default())?;
    let sd = saddle_data(&sys, &graph)?;
    let start = match (edge, g) {
        (Some(k), Some(g)) => (k, g),
        (k, g) => {
            let (k0, g0) = graph.classify_point(&sys, &sys.base_point)?;
            (k.unwrap_or(k0), g.unwrap_or(g0))
        }
    };
    let delta = cfg.delta.first().copied().unwrap_or(0.0);
    let mut gcfg = GraphSimConfig::default();
    if let Some(h) = h {
        gcfg.h = h;
    }
    let mut summary = sink(&cfg.out, "summary.csv")?;
    writeln!(summary, "run,t,edge,g,stopped,branches")?;
    for i in 0..cfg.n_runs {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let path = if delta > 0.0 {
            simulate_graph_diffusion(&table, &graph, &sd, delta, start, t_end, gcfg, &mut rng)?
        } else {
            simulate_limit_process(&table, &graph, &sd, start, t_end, &mut rng)?
        };
        if i == 0 && cfg.out.is_some() {
            path.write_csv(sink(&cfg.out, "path.csv")?)?;
        }
        let (t, s) = path.last();
        let (e, gv) = match s {
            GraphState::Edge { edge, g } => (edge.to_string(), format!("{g:.12e}")),
            GraphState::Vertex { .. } => (String::new(), String::new()),
        };
        writeln!(summary, "{i},{t:.12e},{e},{gv},{},{}", path.stopped, path.branches.len())?;
    }
    summary.flush()?;
    Ok(())
}

fn metastable(common: &Common, format: Format) -> Result<()> {
    let cfg = common.resolve(ExperimentKind::Metastability)?;
    let sys = cfg.system.resolve()?;
    let graph = ReebGraph::build(&sys)?;
    let report = metastable_thresholds(&sys, &graph, cfg.options.grid, &TraceOptions::default())?;
    let mut out = sink(&cfg.out, if format == Format::Json { "metastable.json" } else { "metastable.txt" })?;
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        Format::Text => {
            writeln!(out, "saddle {} upper {} deep {} shallow {}", report.saddle, report.upper, report.deep, report.shallow)?;
            for (k, l) in &report.lambda {
                writeln!(
                    out,
                    "edge {k}: lambda {l:.6} refined {:.6} exit exponent {:.6} p {:.6}",
                    report.lambda_refined[k],
                    report.exit_exponent[k],
                    report.p.get(k).copied().unwrap_or(f64::NAN)
                )?;
            }
            for r in &report.rows {
                writeln!(out, "start {} lambda {:.6} -> {:?}", r.start, r.lambda, r.outcome)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn torus_system(cfg: &ExperimentConfig) -> Result<TorusSystem> {
    let mut sys = TorusSystem::canonical();
    if let Some(e) = cfg.eps.first() {
        sys = sys.with_epsilon(*e);
    }
    if let Some(d) = cfg.delta.first() {
        sys = sys.with_delta(*d);
    }
    Ok(sys)
}

fn torus(action: &TorusAction) -> Result<()> {
    match action {
        TorusAction::InvariantCheck {
            t_end,
            bins,
            normalized,
            common,
        } => {
            let cfg = common.resolve(ExperimentKind::Torus)?;
            let sys = torus_system(&cfg)?;
            let wells = sys.resolve_wells()?;
            let x0 = sys.ergodic_point(&wells)?;
            let flow = if *normalized { FastFlow::Normalized } else { FastFlow::Standard };
            let icfg = slowfast::flow::IntegratorConfig::default().with_step(cfg.options.invariant_step);
            let check = invariant_measure_check(&sys, &x0, *t_end, 1.0, (*bins, *bins), flow, &icfg, QuadratureOptions::default())?;
            let mut out = sink(&cfg.out, "invariant.csv")?;
            writeln!(out, "bin,observed,expected")?;
            for (i, (o, e)) in check.observed.iter().zip(&check.expected).enumerate() {
                writeln!(out, "{i},{o},{e:.6}")?;
            }
            out.flush()?;
            eprintln!("samples {} chi2 {:.4} p {:.4}", check.samples, check.chi2, check.p_value);
        }
        TorusAction::Rates { common } => {
            let cfg = common.resolve(ExperimentKind::Torus)?;
            let sys = torus_system(&cfg)?;
            let graph = torus_rates(&sys, cfg.options.grid, &TraceOptions::default(), QuadratureOptions::default())?;
            graph.write_csv(sink(&cfg.out, "rates.csv")?)?;
        }
        TorusAction::LimitSim { t_end, dt, common } => {
            let cfg = common.resolve(ExperimentKind::Torus)?;
            let sys = torus_system(&cfg)?;
            let graph = torus_rates(&sys, cfg.options.grid, &TraceOptions::default(), QuadratureOptions::default())?;
            let mut out = sink(&cfg.out, "limit.csv")?;
            writeln!(out, "run,first_edge,entry_time,t_end")?;
            for i in 0..cfg.n_runs {
                let mut rng = stream_rng(cfg.seed, i as u64);
                let path = simulate_torus_limit(&graph, ROOT, *t_end, *dt, &mut rng)?;
                let (edge, time) = path.branches.first().map(|b| (b.edge.to_string(), b.t)).unwrap_or((String::new(), f64::NAN));
                writeln!(out, "{i},{edge},{time:.12e},{:.12e}", path.last().0)?;
            }
            out.flush()?;
        }
        TorusAction::SdeSim { t_end, every, common } => {
            let cfg = common.resolve(ExperimentKind::Torus)?;
            let sys = torus_system(&cfg)?;
            let wells = sys.resolve_wells()?;
            let x0 = sys.ergodic_point(&wells)?;
            let icfg = slowfast::flow::IntegratorConfig {
                step: cfg.options.step,
                seed: cfg.seed,
                record_every: (*every).max(1),
                tol_f: 1e-6,
                ..Default::default()
            };
            let mut rng = stream_rng(cfg.seed, 0);
            let (traj, path) = simulate_torus_sde(&sys, &x0, *t_end, &icfg, &mut rng)?;
            traj.write_jsonl(sink(&cfg.out, "trajectory.jsonl")?, 1)?;
            if cfg.out.is_some() {
                path.write_csv(sink(&cfg.out, "graph_path.csv")?)?;
            }
        }
    }
    Ok(())
}

fn experiment(kind: ExperimentKind, common: &Common) -> Result<bool> {
    let cfg = common.resolve(kind)?;
    if cfg.kind != kind {
        bail!("config is for '{}', not '{}'", cfg.kind.name(), kind.name());
    }
    let report = experiments::run(&cfg)?;
    print!("{}", report.text());
    if let Some(dir) = &cfg.out {
        report.write_to_dir(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        eprintln!("wrote {}", Path::new(dir).display());
    }
    Ok(report.passed())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { t_end, every, common } => simulate(common, *t_end, *every),
        Command::Coeffs { common } => coeffs(common),
        Command::Graphsim { h, t_end, edge, g, common } => graphsim(common, *h, *t_end, *edge, *g),
        Command::Metastable { format, common } => metastable(common, *format),
        Command::Torus { action } => torus(action),
        Command::Experiment { kind, common } => {
            if !experiment(*kind, common)? {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}
