//! Error models g(X, Y, β), reporting models Pr(Z | E = 1, Y, X), presets
//! and identifiability counting.

mod error_model;
mod identifiability;
mod presets;
mod priors;
mod reporting;

pub use error_model::{
    error_probability, BetaPrior, CompiledErrorModel, DesignTerm, ErrorEngine, ErrorModelSpec, ErrorRow, NormalPrior,
};
pub use identifiability::{check_identifiability, IdentifiabilityReport, Verdict};
pub use presets::{
    build_preset, BuiltPreset, MeasurementModel, Preset, PresetModel, PresetOptions, MODEL5_MALE_BA_ERROR,
    MODEL5_MALE_BA_REPORTING, MODEL6_MALE_BA_ERROR, MODEL6_MALE_BA_REPORTING, MODEL7_ERROR,
};
pub use priors::{PriorRow, PriorTable};
pub use reporting::{
    reporting_distribution, CompiledReporting, DirichletPrior, ReportingKind, ReportingModelSpec, ReportingTables,
};
