use std::path::PathBuf;

use thiserror::Error;

/// Problems with a schema or with an input file that does not satisfy it.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}, column `{column}`: unknown level `{value}`")]
    UnknownLevel {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}, column `{column}`: weight `{value}` is not a positive number")]
    BadWeight {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}, column `{column}`: missing value")]
    MissingValue {
        path: PathBuf,
        row: usize,
        column: String,
    },
    #[error("{path}: refusing to load a simulation truth ledger as survey data")]
    LedgerRefused { path: PathBuf },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Failures while turning gold-file estimates into a posterior for the
/// true-data model.
#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("gold file needs at least two records, found {0}")]
    TooFewRecords(usize),
    #[error("cell {cell}: total for level {level} is {value}, moment matching needs a positive total")]
    NonPositiveTotal { cell: usize, level: usize, value: f64 },
    #[error("cell {cell}: {rejected} of {attempts} augmentation draws gave a negative remainder total")]
    AugmentationAbort {
        cell: usize,
        rejected: usize,
        attempts: usize,
    },
    #[error("augmentation input: {0}")]
    BadAugmentation(String),
    #[error("cell {0} has no entry in the true-data posterior")]
    MissingCell(usize),
    #[error("invalid covariance: {0}")]
    BadCovariance(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Invalid measurement-model specifications or parameter vectors.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid error model: {0}")]
    ErrorSpec(String),
    #[error("invalid reporting model: {0}")]
    ReportingSpec(String),
    #[error("expected {expected} error-model parameters, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("preset {preset} needs covariates missing from the schema: {missing:?}")]
    IncompatibleSchema { preset: String, missing: Vec<String> },
    #[error("prior table: {0}")]
    PriorTable(String),
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("record {record}: every candidate true level has zero probability")]
    DegenerateConditional { record: usize },
    #[error("model has {requested} free error/reporting parameters but the data identify at most {max}; set allow_overparameterized to run anyway")]
    Overparameterized { requested: usize, max: usize },
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("combining needs at least two imputations, got {0}")]
    TooFewImputations(usize),
    #[error("negative within-imputation variance {0}")]
    NegativeVariance(f64),
    #[error("invalid estimand `{name}`: {reason}")]
    Estimand { name: String, reason: String },
    #[error("runs `{0}` and `{1}` use different schemas")]
    SchemaMismatch(String, String),
    #[error("sensitivity report needs at least two runs, got {0}")]
    TooFewRuns(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
