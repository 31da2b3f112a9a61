//! Multiply-imputed, survey-weighted inference on completed datasets.

mod coverage;
mod estimands;
mod rubin;
mod sensitivity;

pub use coverage::{coverage_against_shares, coverage_diagnostic, CoverageEntry, CoverageReport};
pub use estimands::{combine_estimand, estimate_per_imputation, DomainFilter, EstimandKind, EstimandResult, EstimandSpec, PreparedEstimand};
pub use rubin::{rubin_combine, t_quantile_975, MIEstimate};
pub use sensitivity::{estimate_table, format_sig6, sensitivity_report, EstimateTable, ReportRow, REPORT_COLUMNS};
