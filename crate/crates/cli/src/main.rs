//! `pmquant`: preprocess, train, predict, evaluate and report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_quantiles, Overrides};

/// Environment variable that sets the number of worker threads.
pub const WORKERS_ENV: &str = "PMQUANT_WORKERS";

/// Invalid invocation or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "pmquant", version, about = "Dense quantile regression of PM2.5 from satellite rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Run configuration (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for splitting, initialization and batching
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, clap::Args)]
struct LossFlags {
    /// Lower and upper quantile levels, e.g. 0.1,0.9
    #[arg(long, value_parser = parse_quantiles)]
    quantiles: Option<(f64, f64)>,
    /// Smoothing scale of the quantile loss
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a prepared dataset from scenes and ground truth, or synthetically
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a prepared dataset
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        loss: LossFlags,
        /// Prepared dataset (overrides `dataset` in the config)
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Resume from a checkpoint written by an earlier run
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write lower/median/upper GeoTIFFs for one scene
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input band stack (GeoTIFF)
        #[arg(long)]
        input: PathBuf,
        /// The input is already normalized (e.g. a prepared sample)
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics of a checkpoint (or the synthetic truth) on a dataset
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Which part of the dataset to score
        #[arg(long, value_enum, default_value_t = commands::evaluate::Split::Test)]
        split: commands::evaluate::Split,
        /// Score the stored true quantiles instead of a model
        #[arg(long)]
        oracle: bool,
    },
    /// Density, scatter and metric tables from earlier outputs
    Report {
        /// Two prediction directories to compare (e.g. before and after)
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        pair: Option<Vec<PathBuf>>,
        /// Region label raster for the scatter table
        #[arg(long)]
        regions: Option<PathBuf>,
        /// Evaluation output directories to tabulate
        #[arg(long = "eval")]
        evals: Vec<PathBuf>,
        /// Training run directories to tabulate
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use pmquant::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<E>() {
        Some(E::Config(_) | E::Domain(_) | E::NonDifferentiable { .. }) => 1,
        Some(E::Divergence { .. }) => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<csv::Error>().is_some() => 2,
        None => 3,
    }
}

fn init_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| UsageError(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(UsageError(format!("{WORKERS_ENV} must be positive")).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_workers()?;
    match cli.command {
        Command::Preprocess { common } => {
            let o = Overrides { seed: common.seed, ..Overrides::default() };
            commands::preprocess::run(common.config.as_deref(), &o, &common.out)
        }
        Command::Train { common, loss, dataset, epochs, checkpoint } => {
            let o = Overrides { seed: common.seed, quantiles: loss.quantiles, alpha: loss.alpha, epochs };
            commands::train::run(common.config.as_deref(), &o, dataset, checkpoint.as_deref(), &common.out)
        }
        Command::Predict { checkpoint, input, normalized, out } => commands::predict::run(&checkpoint, &input, normalized, &out),
        Command::Evaluate { common, checkpoint, dataset, split, oracle } => {
            let o = Overrides { seed: common.seed, ..Overrides::default() };
            commands::evaluate::run(common.config.as_deref(), &o, checkpoint.as_deref(), dataset, split, oracle, &common.out)
        }
        Command::Report { pair, regions, evals, runs, bins, out } => {
            commands::report::run(pair.as_deref(), regions.as_deref(), &evals, &runs, bins, &out)
        }
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
    commands::init_logging(None);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
