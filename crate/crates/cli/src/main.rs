//! `conflict-intensity`: ingest CAMEO-coded events, fit the ordinal intensity
//! model, and run the evaluation and forecasting analyses.
//!
//! Exit status: 0 on success, 1 for configuration or usage errors, 2 for
//! data errors, 3 for sampler failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conflict_intensity::model::Site;

use config::{RunConfig, CONFIG_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] conflict_intensity::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use conflict_intensity::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Sampler(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "conflict-intensity",
    version,
    about = "Ordinal latent intensity model for CAMEO-coded events"
)]
pub struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct SamplerArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
}

impl SamplerArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.classes {
            c.classes = v;
        }
        if let Some(v) = self.draws {
            c.sampler.draws = v;
        }
        if let Some(v) = self.warmup {
            c.sampler.warmup = v;
        }
        if let Some(v) = self.chains {
            c.sampler.chains = v;
        }
        if let Some(v) = self.target_accept {
            c.sampler.target_accept = v;
        }
        if let Some(v) = self.max_depth {
            c.sampler.max_tree_depth = v;
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw event export into the canonical tuple CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// JSON override for the actor and Goldstein tables.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Where to write skipped rows; defaults to `<output>.skipped.csv`.
        #[arg(long)]
        skip_report: Option<PathBuf>,
    },
    /// Draw synthetic tuples with known latent classes.
    Simulate {
        #[arg(long)]
        output: PathBuf,
        /// Class labels; defaults to `<output>.labels.csv`.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Parameter pack to simulate from; a well-separated default otherwise.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        events: Option<usize>,
    },
    /// Sample the posterior and write it as JSON lines.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Diagnostics JSON; defaults to `<output>.diagnostics.json`.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Per-event posterior class mass, mean and mode.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Held-out imputation against the baselines.
    Impute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Site to impute; all four when absent.
        #[arg(long)]
        site: Option<Site>,
        /// Comma-separated subset of naive, prior, lr.
        #[arg(long, default_value = "naive,prior,lr")]
        baselines: String,
        /// JSON summary including fit diagnostics.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Held-out joint SPPD across class counts.
    SelectC {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Class counts to sweep, e.g. `3,4,5,6,7`.
        #[arg(long, value_delimiter = ',')]
        range: Option<Vec<usize>>,
        /// Fits per class count.
        #[arg(long)]
        seeds: Option<usize>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// AR/VAR forecasting and Granger tests for one location.
    Forecast {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        location: String,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        max_lag: Option<usize>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Pearson correlations among a location's monthly series.
    Correlate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        location: String,
        #[arg(long)]
        output: PathBuf,
        /// Extra `month,value` series; named after the file stem.
        #[arg(long)]
        external: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
