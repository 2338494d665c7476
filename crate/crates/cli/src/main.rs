mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "pbn-rl",
    version,
    about = "Simulate, analyze, infer and control probabilistic Boolean networks"
)]
struct Cli {
    /// Seed for every random draw; reruns with the same seed are identical.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file against the model rules.
    Validate { network: PathBuf },
    /// Find attractors, optionally with basin occupancy estimates.
    Attractors(AttractorsArgs),
    /// Write one uncontrolled trajectory.
    Simulate(SimulateArgs),
    /// Steady-state distribution, exact or by long-run simulation.
    Ssd(SsdArgs),
    /// Train a controller.
    Train(TrainArgs),
    /// Evaluate a trained controller.
    Eval(EvalArgs),
    /// Random-control baseline for an attractor task.
    Baseline(BaselineArgs),
    /// Infer a network from an expression matrix.
    Infer(InferArgs),
    /// List bundled training presets.
    Presets,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "PBN_RL_OUT", default_value = "pbn-rl-out")]
    out: PathBuf,
}

#[derive(Args)]
struct AttractorsArgs {
    network: PathBuf,
    /// Estimate basin occupancy from this many uncontrolled runs.
    #[arg(long)]
    occupancy: Option<u64>,
    /// Step cap per occupancy run.
    #[arg(long, default_value_t = 10_000)]
    max_steps: u64,
    /// Largest N searched.
    #[arg(long, default_value_t = pbn_rl::analysis::DEFAULT_ATTRACTOR_CAP)]
    cap: usize,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct SimulateArgs {
    network: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: u64,
    /// Initial state as a bit string (default: uniform random).
    #[arg(long)]
    start: Option<String>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct SsdArgs {
    network: PathBuf,
    /// Power iteration on the full transition matrix (N <= 16).
    #[arg(long, conflicts_with_all = ["runs", "steps", "policy"])]
    exact: bool,
    #[arg(long, default_value_t = 300)]
    runs: u64,
    #[arg(long, default_value_t = 4000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    burn_in: u64,
    /// Trained checkpoint applied as a controller (needs --task).
    #[arg(long, requires = "task")]
    policy: Option<PathBuf>,
    /// Task that maps the policy's actions to nodes.
    #[arg(long)]
    task: Option<PathBuf>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    task: PathBuf,
    /// Bundled preset name (see `presets`).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Training config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the episode horizon.
    #[arg(long)]
    horizon: Option<u32>,
    /// Override the schedule length (epochs or total steps).
    #[arg(long)]
    budget: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Success,
    Ssd,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Success)]
    mode: EvalMode,
    /// Attempts per initial state.
    #[arg(long, default_value_t = pbn_rl::eval::DEFAULT_ATTEMPTS)]
    attempts: u32,
    /// Horizons to report (repeatable; default: the task horizon). The
    /// threshold applies to the first.
    #[arg(long = "horizon")]
    horizons: Vec<u32>,
    /// `exhaustive` or `sampled:COUNT` (default: exhaustive up to N = 20).
    #[arg(long)]
    initial: Option<String>,
    #[arg(long, default_value_t = 300)]
    runs: u64,
    #[arg(long, default_value_t = 4000)]
    steps: u64,
    /// Pass mark: success rate, or desirable-mass gain in ssd mode.
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 1000)]
    attempts: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: u32,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Misclassification,
    SquaredError,
}

#[derive(Args)]
struct InferArgs {
    /// Expression CSV: a gene-name column then one column per sample.
    expression: PathBuf,
    /// File with one gene name per line.
    #[arg(long)]
    genes: PathBuf,
    /// The CSV already holds 0/1 values.
    #[arg(long)]
    binary: bool,
    #[arg(long, default_value_t = 2)]
    max_inputs: usize,
    #[arg(long, default_value_t = 0.01)]
    min_cod_gain: f64,
    #[arg(long, default_value_t = 0.0)]
    laplace_alpha: f64,
    #[arg(long, value_enum, default_value_t = Metric::Misclassification)]
    metric: Metric,
    #[command(flatten)]
    out: OutDir,
}

fn main() -> ExitCode {
    manifest::mark_start();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = cli.seed;
    let result = match cli.command {
        Command::Validate { network } => commands::validate(&network),
        Command::Attractors(a) => commands::attractors(a, seed),
        Command::Simulate(a) => commands::simulate(a, seed),
        Command::Ssd(a) => commands::ssd(a, seed),
        Command::Train(a) => commands::train(a, seed),
        Command::Eval(a) => commands::eval(a, seed),
        Command::Baseline(a) => commands::baseline(a, seed),
        Command::Infer(a) => commands::infer(a, seed),
        Command::Presets => commands::presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
