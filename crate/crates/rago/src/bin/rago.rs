//! Batch front door for the rotation-averaging toolkit.
//!
//! Subcommands: `gen` (synthetic datasets), `train`, `infer`, `baseline`,
//! `eval`. Exit codes are a stable scripting contract: 0 success, 2 config
//! error, 3 unreadable or unwritable files, 4 numerical failure. Every
//! seeded command echoes its seed in the output header so results can be
//! reproduced from logs alone.

use clap::{Parser, Subcommand, ValueEnum};
use rago::classical::{spt_init, weiszfeld_mra, SptPolicy};
use rago::config::{parse_arch_config, parse_synth_config, ConfigError};
use rago::eval::{mn_md_error, EvalError};
use rago::solver::{
    trace_to_csv, train, ArchConfig, InferInit, Model, SolverError, TrainConfig,
};
use rago::synth::{make_dataset, SynthConfig, SynthError};
use rago::viewgraph::{load_rotations, save_rotations, GraphError, ViewGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rago",
    version,
    about = "Rotation averaging: synthetic view-graphs, a learned recurrent solver, classical baselines"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset of synthetic view-graphs plus a manifest.
    Gen {
        /// `key = value` recipe; omitted keys have no defaults, omitted file
        /// means the stock desk-scale distribution.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "dataset")]
        out: PathBuf,
        /// Overrides any seed given in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit solver weights on a dataset manifest.
    Train {
        /// Path to a manifest.csv written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Architecture overrides; every key optional.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        epochs: usize,
        /// Weight file to write; `loss.csv` lands next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        edge_dropout: f64,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the learned solver on one graph and record the iterate trace.
    Infer {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Outer rounds at test time; defaults to the trained setting.
        #[arg(long)]
        tg: Option<usize>,
        #[arg(long, value_enum, default_value_t = InitKind::Random)]
        init: InitKind,
        #[arg(long)]
        trace: PathBuf,
        /// Write final absolute rotations here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds the random initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classical solver on one graph.
    Baseline {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Weiszfeld sweeps over the whole graph.
        #[arg(long, default_value_t = 20)]
        sweeps: usize,
        /// Write estimated absolute rotations here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gauge-aligned error between two rotation files.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Random,
    Spt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Spt,
    Weiszfeld,
}

enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => CliError::Config(e.to_string()),
            SynthError::Graph(_) | SynthError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Config(_) => CliError::Config(e.to_string()),
            SolverError::Weights(_) | SolverError::Graph(_) | SolverError::Io(_) => {
                CliError::Io(e.to_string())
            }
            SolverError::NonFiniteLoss { .. } | SolverError::Numerical(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_string(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_graph(path: &Path) -> Result<ViewGraph, CliError> {
    ViewGraph::load(path).map_err(|e| CliError::Io(format!("graph {}: {e}", path.display())))
}

/// Stock recipe used when `gen` gets no config file: moderate graphs with
/// mixed noise and a small outlier share.
fn default_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_nodes_range: (40, 120),
        edge_fraction_range: (0.1, 0.2),
        sigma_deg_range: (5.0, 15.0),
        outlier_fraction_range: (0.0, 0.15),
        planar_gt: false,
        seed,
    }
}

fn print_mn_md(est: &[rago::so3::Rotation], gt: &[rago::so3::Rotation]) -> Result<(), CliError> {
    let (mn, md) = mn_md_error(est, gt)?;
    println!("mn={mn:.3} md={md:.3}");
    Ok(())
}

fn setup_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RAGO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| CliError::Config(format!("RAGO_THREADS must be an integer, got `{raw}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_gen(
    config: Option<&Path>,
    count: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(path) => parse_synth_config(&read_to_string(path)?, seed)?,
        None => default_synth(seed.unwrap_or(0)),
    };
    println!("# rago gen seed={}", cfg.seed);
    let manifest = make_dataset(&cfg, count, out)?;
    println!("graphs={count} manifest={}", manifest.display());
    Ok(())
}

fn load_arch(path: Option<&Path>) -> Result<ArchConfig, CliError> {
    match path {
        Some(p) => Ok(parse_arch_config(&read_to_string(p)?)?),
        None => Ok(ArchConfig::default()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    arch: Option<&Path>,
    epochs: usize,
    out: &Path,
    edge_dropout: f64,
    gamma: f64,
    seed: u64,
) -> Result<(), CliError> {
    println!("# rago train seed={seed}");
    let arch = load_arch(arch)?;
    let mut model = Model::init(&arch, seed)?;
    let cfg = TrainConfig {
        epochs,
        gamma,
        edge_dropout,
        seed,
        ..TrainConfig::default()
    };
    let curve = train(&mut model, data, &cfg)?;
    model.save(out)?;
    let mut csv = String::from("epoch,loss,lr\n");
    for row in &curve {
        csv.push_str(&format!("{},{:.9},{:.9}\n", row.epoch, row.loss, row.lr));
    }
    let loss_path = match out.parent() {
        Some(dir) => dir.join("loss.csv"),
        None => PathBuf::from("loss.csv"),
    };
    write_string(&loss_path, &csv)?;
    let last = curve.last().expect("train rejects zero epochs");
    println!(
        "weights={} loss_csv={} final_loss={:.6}",
        out.display(),
        loss_path.display(),
        last.loss
    );
    Ok(())
}

fn cmd_infer(
    graph: &Path,
    weights: &Path,
    tg: Option<usize>,
    init: InitKind,
    trace_path: &Path,
    out: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    println!("# rago infer seed={seed}");
    let g = load_graph(graph)?;
    let mut model = Model::load(weights)
        .map_err(|e| CliError::Io(format!("weights {}: {e}", weights.display())))?;
    if let Some(tg) = tg {
        model.arch.t_g_test = tg;
        model.arch.validate()?;
    }
    let init = match init {
        InitKind::Random => InferInit::Random(seed),
        InitKind::Spt => InferInit::Spt,
    };
    let result = model.infer(&g, init)?;
    write_string(trace_path, &trace_to_csv(&result.trace))?;
    if let Some(out) = out {
        save_rotations(out, &result.est_abs)?;
    }
    if let Some(gt) = g.gt_abs() {
        print_mn_md(&result.est_abs, gt)?;
    }
    println!("trace={}", trace_path.display());
    Ok(())
}

fn cmd_baseline(
    graph: &Path,
    method: Method,
    sweeps: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    println!("# rago baseline seed={seed}");
    let g = load_graph(graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let est = match method {
        Method::Spt => spt_init(&g, SptPolicy::MaxDegreeRoot, &mut rng),
        Method::Weiszfeld => {
            let init = spt_init(&g, SptPolicy::MaxDegreeRoot, &mut rng);
            weiszfeld_mra(&g, &init, sweeps)
        }
    };
    if let Some(out) = out {
        save_rotations(out, &est)?;
    }
    if let Some(gt) = g.gt_abs() {
        print_mn_md(&est, gt)?;
    }
    Ok(())
}

fn cmd_eval(est: &Path, gt: &Path) -> Result<(), CliError> {
    println!("# rago eval");
    let est = load_rotations(est).map_err(|e| CliError::Io(format!("est {}: {e}", est.display())))?;
    let gt = load_rotations(gt).map_err(|e| CliError::Io(format!("gt {}: {e}", gt.display())))?;
    print_mn_md(&est, &gt)
}

fn run(cli: Cli) -> Result<(), CliError> {
    setup_threads()?;
    match cli.cmd {
        Cmd::Gen {
            config,
            count,
            out,
            seed,
        } => cmd_gen(config.as_deref(), count, &out, seed),
        Cmd::Train {
            data,
            arch,
            epochs,
            out,
            edge_dropout,
            gamma,
            seed,
        } => cmd_train(&data, arch.as_deref(), epochs, &out, edge_dropout, gamma, seed),
        Cmd::Infer {
            graph,
            weights,
            tg,
            init,
            trace,
            out,
            seed,
        } => cmd_infer(&graph, &weights, tg, init, &trace, out.as_deref(), seed),
        Cmd::Baseline {
            graph,
            method,
            sweeps,
            out,
            seed,
        } => cmd_baseline(&graph, method, sweeps, out.as_deref(), seed),
        Cmd::Eval { est, gt } => cmd_eval(&est, &gt),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
