//! Gold-file totals, their log-normal approximate posterior, and the
//! unreportable-level augmentation.

mod augment;
mod lognormal;
mod pipeline;
mod posterior;
mod totals;

pub use augment::{augment_missing_level, AugmentationInput, DEFAULT_AUGMENTATION_DRAWS, MIN_AUGMENTATION_DRAWS};
pub use lognormal::{lognormal_moments, moment_match_lognormal, LogNormalParams, EIGEN_FLOOR};
pub use pipeline::{build_gold_posterior, AugmentMode, GoldPosterior};
pub use posterior::{draw_theta, CellPosterior, TrueDataPosterior, ZERO_TOTAL_FLOOR};
pub use totals::{estimate_cell_totals, estimate_reported_cell_totals, CellTotals, CellTotalsEstimate};

#[allow(unused_imports)]
pub(crate) use posterior::normalize_log_weights;
