//! Command-line workflows: fit, summarize, ppc, luck, simulate, features.
//!
//! Every command writes a run manifest next to its primary output with the
//! resolved configuration hash, input digests and engine version, so runs
//! can be reproduced exactly. Exit codes: 0 success, 1 numeric/inference
//! failure, 2 input or IO failure.

mod commands;
mod manifest;
mod svg;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad inputs: missing/malformed files, invalid flags.
    #[error("{0}")]
    Input(String),
    /// Numeric or inference failures at run time.
    #[error("{0}")]
    Numeric(String),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Input(_) => 2,
            AppError::Numeric(_) => 1,
        }
    }
}

impl From<ruck::ingest::IngestError> for AppError {
    fn from(e: ruck::ingest::IngestError) -> Self {
        AppError::Input(format!("ingest: {e}"))
    }
}

impl From<ruck::features::FeaturesError> for AppError {
    fn from(e: ruck::features::FeaturesError) -> Self {
        AppError::Input(format!("features: {e}"))
    }
}

impl From<ruck::model::ModelError> for AppError {
    fn from(e: ruck::model::ModelError) -> Self {
        match e {
            ruck::model::ModelError::NonFinite { .. } => AppError::Numeric(format!("model: {e}")),
            other => AppError::Input(format!("model: {other}")),
        }
    }
}

impl From<ruck::sampler::SamplerError> for AppError {
    fn from(e: ruck::sampler::SamplerError) -> Self {
        use ruck::sampler::SamplerError as S;
        match e {
            S::Chain { .. } => AppError::Numeric(format!("sampler: {e}")),
            S::Model(m) => AppError::from(m),
            other => AppError::Input(format!("sampler: {other}")),
        }
    }
}

impl From<ruck::ppc::PpcError> for AppError {
    fn from(e: ruck::ppc::PpcError) -> Self {
        AppError::Input(format!("ppc: {e}"))
    }
}

impl From<ruck::simulate::SimError> for AppError {
    fn from(e: ruck::simulate::SimError) -> Self {
        AppError::Input(format!("simulate: {e}"))
    }
}

fn io_err(path: &std::path::Path, e: std::io::Error) -> AppError {
    AppError::Input(format!("cannot write {}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "ruck",
    version,
    about = "Bayesian score-difference engine for rugby seasons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a season and write posterior draws
    Fit(commands::FitArgs),
    /// Summarize a draws file (Rhat, n_eff, moments, quantiles)
    Summarize(commands::SummarizeArgs),
    /// Posterior predictive checks and outlier flags from a draws file
    Ppc(commands::PpcArgs),
    /// Performance/luck/effort/ability variance decomposition
    Luck(commands::LuckArgs),
    /// Generate a synthetic season with known parameters
    Simulate(commands::SimulateArgs),
    /// Dump model covariates and descriptive statistics for a season
    Features(commands::FeaturesArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(args),
        Command::Summarize(args) => commands::summarize(args),
        Command::Ppc(args) => commands::ppc(args),
        Command::Luck(args) => commands::luck(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Features(args) => commands::features(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
