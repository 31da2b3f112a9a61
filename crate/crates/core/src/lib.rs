//! Measurement-error correction for a categorical survey variable by fusing
//! an error-prone file with a gold-standard file.

pub mod analysis;
pub mod data;
pub mod design;
pub mod digest;
pub mod error;
pub mod gibbs;
pub mod models;
pub mod random;
pub mod schema;
pub mod sim;

pub use analysis::{
    coverage_diagnostic, rubin_combine, sensitivity_report, CoverageReport, DomainFilter, EstimandKind, EstimandSpec, MIEstimate,
};
pub use data::{
    load_dataset, load_error_prone, load_gold, ColumnMap, Dataset, DatasetRole, ErrorProneDataset, ErrorProneRecord,
    GoldDataset, GoldRecord,
};
pub use design::{
    augment_missing_level, draw_theta, estimate_cell_totals, moment_match_lognormal, AugmentationInput,
    CellTotalsEstimate, TrueDataPosterior,
};
pub use gibbs::{impute_cia, run_gibbs, GibbsConfig, GibbsOutput, GibbsSampler, ImputationSet};
pub use error::{AnalysisError, DataError, Error, EstimationError, ModelError, Result, SamplerError};
pub use schema::{enumerate_cells, CellIndex, Covariate, Level, Schema};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
