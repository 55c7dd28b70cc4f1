//! `mixggm`: simulate, fit, select the number of components and evaluate.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mixggm", version, about = "Sparse Gaussian graphical networks for heterogeneous data")]
struct Cli {
    /// Worker threads; defaults to every core.
    #[arg(long, global = true, env = "MIXGGM_THREADS")]
    threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a banded-precision Gaussian mixture.
    Simulate(SimulateArgs),
    /// Fit a mixture network with a fixed number of components.
    Fit(FitArgs),
    /// Choose the number of components by BIC.
    SelectM(SelectArgs),
    /// Score estimates against a known truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long = "M", default_value_t = 3)]
    pub components: usize,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long = "n-per", default_value_t = 100)]
    pub n_per: usize,
    /// Mean offset.
    #[arg(long, default_value_t = 0.5)]
    pub m: f64,
    /// Band strength, one value or one per component.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub c: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// Imputation-consistency iterations.
    #[arg(long = "T", default_value_t = 20)]
    pub iterations: usize,
    #[arg(long = "burn-in", default_value_t = 10)]
    pub burn_in: usize,
    /// Correlation screening level.
    #[arg(long, default_value_t = 0.2)]
    pub alpha1: f64,
    /// Edge selection level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha2: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long = "min-cluster", default_value_t = 10)]
    pub min_cluster: usize,
    #[arg(long = "graph-tol", default_value_t = 1e-6)]
    pub graph_tol: f64,
    #[arg(long = "graph-max-iter", default_value_t = 200)]
    pub graph_max_iter: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "M")]
    pub components: usize,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Also write covariance_k.csv and precision_k.csv.
    #[arg(long = "write-matrices")]
    pub write_matrices: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Samples in rows, variables in columns.
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Candidate counts: `1..5` or `1,2,3`.
    #[arg(long, default_value = "1..5")]
    pub range: String,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// True edges, 1-based.
    #[arg(long = "truth-edges")]
    pub truth_edges: PathBuf,
    /// Edge scores; ranks pairs for the precision-recall curve.
    #[arg(long)]
    pub zbar: Option<PathBuf>,
    /// Estimated edges; selected from `--zbar` at `--alpha2` when absent.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Number of variables when no score matrix is given.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha2: f64,
    /// True cluster labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Estimated cluster labels.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[arg(long = "sigma-true", value_delimiter = ',')]
    pub sigma_true: Vec<PathBuf>,
    #[arg(long = "sigma-hat", value_delimiter = ',')]
    pub sigma_hat: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::SelectM(a) => commands::select(a),
        Command::Evaluate(a) => commands::evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
