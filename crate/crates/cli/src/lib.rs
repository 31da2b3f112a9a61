//! The `mefuse` command line: config loading, the five subcommands, run
//! manifests and exit codes.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mefuse_core::error::{AnalysisError, DataError, Error, EstimationError, ModelError, SamplerError};
use mefuse_core::models::IdentifiabilityReport;

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::{LoadedConfig, ModelSource, Overrides, RunConfig};
pub use manifest::{read_manifest, Manifest, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IDENTIFIABILITY: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("config: {0}")]
    Config(String),
    #[error("the model is over-parameterized; pass --allow-overparameterized to run it anyway\n{0}")]
    Overparameterized(Box<IdentifiabilityReport>),
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

from_core!(DataError, EstimationError, ModelError, SamplerError, AnalysisError);

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Overparameterized(_) => EXIT_IDENTIFIABILITY,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

/// Exit code for a library error: 2 for invalid input, 3 for an
/// identifiability refusal, 4 for numerical failure.
pub fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) | Error::Model(_) => EXIT_VALIDATION,
        Error::Sampler(SamplerError::Overparameterized { .. }) => EXIT_IDENTIFIABILITY,
        Error::Sampler(SamplerError::Config(_)) => EXIT_VALIDATION,
        Error::Sampler(SamplerError::DegenerateConditional { .. }) => EXIT_NUMERICAL,
        Error::Estimation(e) => match e {
            EstimationError::NonPositiveTotal { .. } | EstimationError::AugmentationAbort { .. } => EXIT_NUMERICAL,
            EstimationError::TooFewRecords(_)
            | EstimationError::BadAugmentation(_)
            | EstimationError::MissingCell(_)
            | EstimationError::BadCovariance(_)
            | EstimationError::Dimension(_) => EXIT_VALIDATION,
        },
        Error::Analysis(AnalysisError::NegativeVariance(_)) => EXIT_NUMERICAL,
        Error::Analysis(_) => EXIT_VALIDATION,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mefuse", version, about = "Measurement-error correction by fusing a gold-standard file with an error-prone file")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the true-data posterior from the gold file.
    EstimateGold(CommonArgs),
    /// Draw multiple imputations of the true values in the error-prone file.
    Impute(CommonArgs),
    /// Combine estimands across imputations and compare model runs.
    Analyze(CommonArgs),
    /// Generate a synthetic linked population and sample both files from it.
    Simulate(CommonArgs),
    /// Count parameters against the information the two files provide.
    CheckIdentifiability(CommonArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Run directory for every output and the manifest.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub imputations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// model1 .. model7 or cia; replaces the config's model.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub allow_overparameterized: bool,
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            iterations: self.iterations,
            imputations: self.imputations,
            burn_in: self.burn_in,
            preset: self.preset.clone(),
            label: self.label.clone(),
            allow_overparameterized: self.allow_overparameterized,
        }
    }
}

/// Runs one command and returns its exit code.
pub fn run(command: &Command) -> Result<i32, CliError> {
    let (args, name) = match command {
        Command::EstimateGold(a) => (a, "estimate-gold"),
        Command::Impute(a) => (a, "impute"),
        Command::Analyze(a) => (a, "analyze"),
        Command::Simulate(a) => (a, "simulate"),
        Command::CheckIdentifiability(a) => (a, "check-identifiability"),
    };
    let cfg = LoadedConfig::load(args.config.as_deref(), &args.overrides())?;
    log::debug!("{name}: seed {}", cfg.seed());
    match command {
        Command::EstimateGold(_) => commands::estimate_gold(&cfg),
        Command::Impute(_) => commands::impute(&cfg),
        Command::Analyze(_) => commands::analyze(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::CheckIdentifiability(_) => commands::check_identifiability(&cfg),
    }
}
