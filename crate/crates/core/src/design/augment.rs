use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::lognormal::moment_match_lognormal;
use super::posterior::{apply_zero_floor, CellPosterior, TrueDataPosterior};
use super::totals::{estimate_reported_cell_totals, CellTotalsEstimate};
use crate::data::ErrorProneDataset;
use crate::error::EstimationError;
use crate::random::rng_stream;
use crate::schema::Schema;

pub const DEFAULT_AUGMENTATION_DRAWS: usize = 10_000;
pub const MIN_AUGMENTATION_DRAWS: usize = 1_000;

/// Attempts beyond `draws` allowed before giving up on a cell, as a multiple
/// of `draws`.
const MAX_ATTEMPT_FACTOR: usize = 100;

/// Error-prone-file estimates of each cell's total population, used to
/// recover the totals of the truth level that cannot be reported.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationInput {
    /// (T̂_{x+}, σ̂²(T̂_{x+})) per cell.
    pub cells: Vec<(f64, f64)>,
    pub draws: usize,
}

impl AugmentationInput {
    pub fn new(cells: Vec<(f64, f64)>, draws: usize) -> Result<Self, EstimationError> {
        if draws < MIN_AUGMENTATION_DRAWS {
            return Err(EstimationError::BadAugmentation(format!(
                "draws must be at least {MIN_AUGMENTATION_DRAWS}, got {draws}"
            )));
        }
        for (c, &(t, v)) in cells.iter().enumerate() {
            if !(t >= 0.0) || !t.is_finite() || !(v >= 0.0) || !v.is_finite() {
                return Err(EstimationError::BadAugmentation(format!(
                    "cell {c}: total {t} and variance {v} must be finite and non-negative"
                )));
            }
        }
        Ok(AugmentationInput { cells, draws })
    }

    pub fn from_error_prone(data: &ErrorProneDataset, schema: &Schema, draws: usize) -> Result<Self, EstimationError> {
        Self::new(estimate_reported_cell_totals(data, schema), draws)
    }
}

/// Extends a posterior over the reportable levels with one extra level whose
/// total is the difference between the error-prone file's cell total and the
/// gold-file totals.
///
/// Per cell: draw T*_{x+} ~ Normal(T̂_{x+}, σ̂²), draw the reportable totals from
/// their log-normal, keep the remainder if it is positive and redraw
/// otherwise. The empirical mean and covariance of the accepted vectors are
/// moment-matched again. A cell is aborted when more than half of its first
/// `draws` attempts were rejected. Cells with T̂_{x+} = 0 get no posterior.
pub fn augment_missing_level<R: Rng + ?Sized>(
    reportable: &CellTotalsEstimate,
    aug: &AugmentationInput,
    rng: &mut R,
) -> Result<TrueDataPosterior, EstimationError> {
    if aug.cells.len() != reportable.cells.len() {
        return Err(EstimationError::BadAugmentation(format!(
            "{} cells of error-prone totals for {} gold cells",
            aug.cells.len(),
            reportable.cells.len()
        )));
    }
    let seed: u64 = rng.random();
    let cells = (0..reportable.cells.len())
        .into_par_iter()
        .map(|c| {
            let (t_plus, var_plus) = aug.cells[c];
            if t_plus <= 0.0 {
                log::warn!("cell {c}: no error-prone records, no posterior built");
                return Ok(None);
            }
            let (t, s, _) = apply_zero_floor(&reportable.cells[c], reportable.mean_sq_weight);
            let gold = CellPosterior::from_params(moment_match_lognormal(&t, &s).map_err(|e| e.in_cell(c))?);
            let mut cell_rng = rng_stream(seed, c as u64);
            augment_cell(c, &gold, t_plus, var_plus, aug.draws, &mut cell_rng).map(Some)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrueDataPosterior {
        levels: reportable.levels + 1,
        cells,
    })
}

fn augment_cell<R: Rng + ?Sized>(
    cell: usize,
    gold: &CellPosterior,
    t_plus: f64,
    var_plus: f64,
    draws: usize,
    rng: &mut R,
) -> Result<CellPosterior, EstimationError> {
    let dz = gold.mu.len();
    let d = dz + 1;
    let normal = Normal::new(t_plus, var_plus.sqrt()).map_err(|e| EstimationError::BadAugmentation(e.to_string()))?;
    let mut samples = Vec::with_capacity(draws * d);
    let mut buf = vec![0.0; dz];
    let (mut attempts, mut rejected) = (0usize, 0usize);
    while samples.len() < draws * d {
        if attempts == draws && 2 * rejected > draws {
            return Err(EstimationError::AugmentationAbort { cell, rejected, attempts });
        }
        if attempts >= MAX_ATTEMPT_FACTOR * draws {
            return Err(EstimationError::AugmentationAbort { cell, rejected, attempts });
        }
        attempts += 1;
        let total = normal.sample(rng);
        gold.draw_totals_into(rng, &mut buf);
        let rest = total - buf.iter().sum::<f64>();
        if rest <= 0.0 {
            rejected += 1;
            continue;
        }
        samples.extend_from_slice(&buf);
        samples.push(rest);
    }
    if rejected > 0 {
        log::info!("cell {cell}: {rejected} of {attempts} remainder draws rejected and redrawn");
    }
    let (mean, cov) = empirical_moments(&samples, d);
    let p = moment_match_lognormal(&mean, &cov).map_err(|e| e.in_cell(cell))?;
    Ok(CellPosterior::from_params(p))
}

/// Two-pass sample mean and (n-1)-denominator covariance of row-major draws.
fn empirical_moments(samples: &[f64], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = samples.len() / d;
    let mut mean = vec![0.0; d];
    for row in samples.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for row in samples.chunks_exact(d) {
        for j in 0..d {
            let a = row[j] - mean[j];
            for i in 0..=j {
                cov[(j, i)] += a * (row[i] - mean[i]);
            }
        }
    }
    for j in 0..d {
        for i in 0..=j {
            let v = cov[(j, i)] / (n as f64 - 1.0);
            cov[(j, i)] = v;
            cov[(i, j)] = v;
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::totals::CellTotals;
    use crate::random::rng_stream;

    fn one_cell(t: Vec<f64>, sigma: DMatrix<f64>) -> CellTotalsEstimate {
        CellTotalsEstimate {
            levels: t.len(),
            sample_size: 100,
            cells: vec![CellTotals {
                t_hat: t,
                sigma_hat: sigma,
                records: 10,
                mean_sq_weight: 1.0,
            }],
            mean_sq_weight: 1.0,
        }
    }

    #[test]
    fn degenerate_case_gives_exact_difference() {
        let est = one_cell(vec![100.0, 50.0], DMatrix::zeros(2, 2));
        let aug = AugmentationInput::new(vec![200.0f64].into_iter().map(|t| (t, 0.0)).collect(), 1000).unwrap();
        let post = augment_missing_level(&est, &aug, &mut rng_stream(1, 0)).unwrap();
        assert_eq!(post.levels, 3);
        let cell = post.cell(0).unwrap();
        let mean = cell.mean_totals();
        assert!((mean[2] - 50.0).abs() < 1e-9, "{mean:?}");
        assert!(cell.tau[(2, 2)].abs() < 1e-12, "{}", cell.tau);
    }

    #[test]
    fn posterior_mean_matches_difference_of_means() {
        let sigma = DMatrix::from_row_slice(2, 2, &[400.0, -50.0, -50.0, 225.0]);
        let est = one_cell(vec![1000.0, 500.0], sigma);
        let aug = AugmentationInput::new(vec![(1800.0, 900.0)], DEFAULT_AUGMENTATION_DRAWS).unwrap();
        let post = augment_missing_level(&est, &aug, &mut rng_stream(2, 0)).unwrap();
        let mean = post.cell(0).unwrap().mean_totals();
        // analytic: E[T+] - E[T1] - E[T2]; sd of the remainder ≈ sqrt(900+400+225-100)
        let se = (900.0f64 + 400.0 + 225.0 - 100.0).sqrt() / (DEFAULT_AUGMENTATION_DRAWS as f64).sqrt();
        assert!((mean[2] - 300.0).abs() < 4.0 * se, "{}", mean[2]);
        assert!((mean[0] - 1000.0).abs() < 4.0 * 20.0 / 100.0);
        // remainder variance is the sum of the component variances
        let tau = &post.cell(0).unwrap().tau;
        let var_rest = mean[2] * mean[2] * tau[(2, 2)].exp_m1();
        assert!((var_rest / 1425.0 - 1.0).abs() < 0.1, "{var_rest}");
    }

    #[test]
    fn dominating_gold_totals_abort() {
        let est = one_cell(vec![1000.0, 500.0], DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 100.0]));
        let aug = AugmentationInput::new(vec![(1400.0, 100.0)], 1000).unwrap();
        let err = augment_missing_level(&est, &aug, &mut rng_stream(3, 0)).unwrap_err();
        assert!(matches!(err, EstimationError::AugmentationAbort { cell: 0, .. }));
    }

    #[test]
    fn too_few_draws_rejected() {
        assert!(AugmentationInput::new(vec![(1.0, 0.0)], 999).is_err());
        assert!(AugmentationInput::new(vec![(1.0, -1.0)], 1000).is_err());
    }

    #[test]
    fn absent_cells_have_no_posterior() {
        let est = one_cell(vec![10.0, 10.0], DMatrix::zeros(2, 2));
        let aug = AugmentationInput::new(vec![(0.0, 0.0)], 1000).unwrap();
        let post = augment_missing_level(&est, &aug, &mut rng_stream(4, 0)).unwrap();
        assert!(post.cell(0).is_none());
    }

    #[test]
    fn reproducible_from_seed() {
        let est = one_cell(vec![100.0, 80.0], DMatrix::from_row_slice(2, 2, &[30.0, -5.0, -5.0, 20.0]));
        let aug = AugmentationInput::new(vec![(220.0, 40.0)], 2000).unwrap();
        let a = augment_missing_level(&est, &aug, &mut rng_stream(5, 0)).unwrap();
        let b = augment_missing_level(&est, &aug, &mut rng_stream(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_moments_of_known_rows() {
        let (m, c) = empirical_moments(&[1.0, 2.0, 3.0, 6.0], 2);
        assert_eq!(m, vec![2.0, 4.0]);
        assert_eq!(c[(0, 0)], 2.0);
        assert_eq!(c[(0, 1)], 4.0);
        assert_eq!(c[(1, 1)], 8.0);
    }
}
