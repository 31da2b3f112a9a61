use serde::{Deserialize, Serialize};

use super::augment::{augment_missing_level, AugmentationInput};
use super::posterior::TrueDataPosterior;
use super::totals::{estimate_cell_totals, CellTotalsEstimate};
use crate::data::{ErrorProneDataset, GoldDataset};
use crate::error::EstimationError;
use crate::random::rng_stream;
use crate::schema::Schema;

/// When to recover the unreportable level from error-prone totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Augment when the schema has an unreportable level and the gold file
    /// has no records at it.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Clone, Debug)]
pub struct GoldPosterior {
    pub posterior: TrueDataPosterior,
    pub totals: CellTotalsEstimate,
    pub augmented: bool,
}

/// Cell totals from the gold file, their log-normal posterior, and the
/// augmentation step when it applies.
pub fn build_gold_posterior(
    gold: &GoldDataset,
    error_prone: Option<&ErrorProneDataset>,
    schema: &Schema,
    mode: AugmentMode,
    draws: usize,
    seed: u64,
) -> Result<GoldPosterior, EstimationError> {
    let (d_y, d_z) = (schema.true_levels, schema.reported_levels);
    let has_unreportable = gold.records.iter().any(|r| !schema.is_reportable(r.y));
    let augment = match mode {
        AugmentMode::Never => false,
        AugmentMode::Always => true,
        AugmentMode::Auto => d_y > d_z && !has_unreportable,
    };
    let totals = estimate_cell_totals(gold, schema)?;
    if !augment {
        if d_y > d_z && !has_unreportable {
            log::warn!("gold file has no records at unreportable levels and augmentation is off");
        } else {
            log::info!("augmentation skipped");
        }
        let posterior = TrueDataPosterior::from_totals(&totals)?;
        return Ok(GoldPosterior { posterior, totals, augmented: false });
    }
    if d_y != d_z + 1 {
        return Err(EstimationError::BadAugmentation(format!(
            "augmentation recovers exactly one unreportable level; schema has {} true and {} reported levels",
            d_y, d_z
        )));
    }
    if has_unreportable {
        log::warn!("gold records at the unreportable level are ignored by augmentation");
    }
    let ep = error_prone.ok_or_else(|| {
        EstimationError::BadAugmentation(
            "the unreportable level needs error-prone totals; supply the error-prone file".into(),
        )
    })?;
    let reportable = totals.truncated(d_z);
    let input = AugmentationInput::from_error_prone(ep, schema, draws)?;
    let mut rng = rng_stream(seed, 0);
    let posterior = augment_missing_level(&reportable, &input, &mut rng)?;
    Ok(GoldPosterior { posterior, totals: reportable, augmented: true })
}
