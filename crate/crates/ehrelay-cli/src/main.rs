//! Batch front-end for the relay analysis library: sweeps, optimizations,
//! simulations, and the analytic-vs-simulation validation, all driven by a
//! JSON config and emitting CSV/JSON artifacts.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehrelay::qbd_solver::{DEFAULT_MAX_ITER, DEFAULT_TOL};

use commands::CommonArgs;
use config::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(ehrelay::Error),
    ValidationFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::ValidationFailed(msg) => write!(f, "validation failed: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(ehrelay::Error::InvalidParams(_))
            | CliError::Core(ehrelay::Error::InvalidThreshold { .. }) => 2,
            CliError::Core(ehrelay::Error::NoConvergence { .. }) => 3,
            CliError::ValidationFailed(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ehrelay",
    about = "Throughput/delay analysis and policy optimization for a wireless-powered relay",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config (see the README for the schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output artifact path (CSV or JSON depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the simulation seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the total simulated slots from the config.
    #[arg(long, global = true)]
    slots: Option<u64>,

    /// Relative bracket width at which the golden-section searches stop.
    #[arg(long, global = true, default_value_t = 0.01)]
    eps: f64,

    /// Worker threads for grid evaluations (default: all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,

    /// Max-norm tolerance of the rate-matrix fixed point.
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,

    /// Iteration budget of the rate-matrix fixed point.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,

    /// Also dump the transition matrices and level blocks as CSV.
    #[arg(long, global = true)]
    dump_matrices: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic metrics over a decoding-probability grid.
    SweepStatic {
        /// Run the simulator next to the analytic columns.
        #[arg(long)]
        with_sim: bool,
    },
    /// Golden-section search for the delay-optimal static policy.
    OptimizeStatic,
    /// Threshold search for the delay-optimal dynamic policy.
    OptimizeDynamic {
        /// Also emit exact metrics over the whole (e_th, beta) family.
        #[arg(long)]
        sweep_csv: Option<PathBuf>,
    },
    /// Monte Carlo run of the configured policy or policies.
    Simulate {
        /// Dump a per-slot protocol trace of the first policy.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Analytic-vs-simulation comparison; exit code 4 on deviation >= 2%.
    Validate {
        /// Test hook: scales analytic delays to verify the gate trips.
        #[arg(long, hide = true, default_value_t = 1.0)]
        distort_analytic: f64,
    },
    /// Delay-optimal thresholds for the reference parameter set.
    Table4,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.parallel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let args = CommonArgs {
        out: cli.out,
        eps: cli.eps,
        tol: cli.tol,
        max_iter: cli.max_iter,
        dump_matrices: cli.dump_matrices,
    };
    let experiment = |required_by: &str| -> Result<config::Experiment, CliError> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{required_by} needs --config <json>")))?;
        ConfigFile::load(path)?.build(cli.seed, cli.slots)
    };

    match cli.command {
        Command::SweepStatic { with_sim } => {
            commands::sweep_static(&experiment("sweep-static")?, &args, with_sim)
        }
        Command::OptimizeStatic => {
            commands::run_optimize_static(&experiment("optimize-static")?, &args)
        }
        Command::OptimizeDynamic { sweep_csv } => commands::run_optimize_dynamic(
            &experiment("optimize-dynamic")?,
            &args,
            sweep_csv.as_deref(),
        ),
        Command::Simulate { dump_trace } => {
            commands::simulate(&experiment("simulate")?, &args, dump_trace.as_deref())
        }
        Command::Validate { distort_analytic } => {
            commands::validate(&experiment("validate")?, &args, distort_analytic)
        }
        Command::Table4 => commands::table4(&args, cli.seed.unwrap_or(1)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
