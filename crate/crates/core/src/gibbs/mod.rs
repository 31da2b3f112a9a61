//! Multiple imputation of the true values in the error-prone file.

mod cia;
mod conditional;
mod config;
mod imputation;
mod sampler;
mod updates;

pub use cia::impute_cia;
pub use conditional::{conditional_weights, full_conditional_y, ModelState};
pub use config::{GibbsConfig, SweepMode, ThetaRedraw};
pub use imputation::{ImputationMethod, ImputationSet, Provenance, IMPUTED_COLUMN, INDEX_FILE, LONG_FILE, REPORTED_COLUMN, WEIGHT_COLUMN};
pub use sampler::{run_gibbs, ChainState, GibbsOutput, GibbsSampler, ParamTrace};
pub use updates::{sample_beta, update_error_params, update_reporting_params, MhState, SufficientStats, TARGET_ACCEPTANCE};
