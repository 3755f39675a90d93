//! `splr`: fit sparse low-rank surrogates from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use output::Format;

#[derive(Parser)]
#[command(
    name = "splr",
    version,
    about = "Sparse low-rank tensor surrogates from samples"
)]
struct Cli {
    /// Worker threads (default: number of logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides `output.dir`.
    #[arg(long, env = "SPLR_OUT")]
    out: Option<PathBuf>,

    /// Sample seed; overrides `seed`.
    #[arg(long, env = "SPLR_SEED")]
    seed: Option<u64>,

    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes model.json, fitted.csv and report.{csv,json}.
    ///
    /// report.csv columns: m, empirical_error, cv_error, validation_error,
    /// sparsity, sparsity_1..sparsity_d, selected.
    Fit(RunArgs),
    /// Lasso path of one regression; writes path.{csv,json}.
    ///
    /// path.csv columns: step, lambda, l1_norm, active, loo_error.
    Path(RunArgs),
    /// Repetition study over a grid of degrees, sample rules and ranks;
    /// writes study.{csv,json}.
    ///
    /// study.csv columns: cell, degree, c, alpha, q, max_rank, repetitions,
    /// succeeded, statistic (mean|min|max), value, status (ok|partial|failed).
    Study(RunArgs),
    /// Evaluate a saved model at the points of a CSV with header x1,...,xd.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// Output directory for eval.{csv,json}; stdout if absent.
        #[arg(long, env = "SPLR_OUT")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Config(config::ConfigError(
                "--jobs: must be >= 1".into(),
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(&config::load(&a.config, a.seed, a.out)?, a.format),
        Command::Path(a) => commands::path(&config::load(&a.config, a.seed, a.out)?, a.format),
        Command::Study(a) => commands::study(&config::load(&a.config, a.seed, a.out)?, a.format),
        Command::Eval {
            model,
            points,
            out,
            format,
        } => commands::eval(&model, &points, out.as_deref(), format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
