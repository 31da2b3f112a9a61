use nalgebra::DMatrix;

use crate::data::{ErrorProneDataset, GoldDataset};
use crate::error::EstimationError;
use crate::schema::Schema;

/// Design-based totals of one covariate cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTotals {
    /// Estimated population count per true level.
    pub t_hat: Vec<f64>,
    /// Estimated covariance of `t_hat` under with-replacement PPS sampling.
    pub sigma_hat: DMatrix<f64>,
    /// Gold records falling in the cell.
    pub records: usize,
    /// Mean squared weight of those records; 0 for an empty cell.
    pub mean_sq_weight: f64,
}

impl CellTotals {
    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    pub fn zero_levels(&self) -> Vec<usize> {
        self.t_hat
            .iter()
            .enumerate()
            .filter(|(_, &t)| t <= 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    /// Keeps the first `levels` entries.
    pub fn truncated(&self, levels: usize) -> CellTotals {
        CellTotals {
            t_hat: self.t_hat[..levels].to_vec(),
            sigma_hat: self.sigma_hat.view((0, 0), (levels, levels)).into_owned(),
            records: self.records,
            mean_sq_weight: self.mean_sq_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellTotalsEstimate {
    pub levels: usize,
    /// n_G, the gold sample size used in the variance formulas.
    pub sample_size: usize,
    pub cells: Vec<CellTotals>,
    /// Mean squared weight over the whole gold file.
    pub mean_sq_weight: f64,
}

impl CellTotalsEstimate {
    pub fn empty_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    /// Restricts every cell to its first `levels` true levels.
    pub fn truncated(&self, levels: usize) -> CellTotalsEstimate {
        assert!(levels <= self.levels);
        CellTotalsEstimate {
            levels,
            sample_size: self.sample_size,
            cells: self.cells.iter().map(|c| c.truncated(levels)).collect(),
            mean_sq_weight: self.mean_sq_weight,
        }
    }
}

/// Weighted totals T̂_xk = Σ w_i 1{X_i = x, Y_i = k} with the
/// with-replacement variance and covariance estimators, where n is the whole
/// gold sample size.
///
/// Each record contributes to a single (x, k) pair, so the covariance sum
/// collapses to `-T̂_xk T̂_xl / (n - 1)` and the variance to
/// `n/(n-1) (Σ w² - T̂²/n)`.
pub fn estimate_cell_totals(gold: &GoldDataset, schema: &Schema) -> Result<CellTotalsEstimate, EstimationError> {
    let n = gold.len();
    if n < 2 {
        return Err(EstimationError::TooFewRecords(n));
    }
    let levels = schema.true_levels;
    let n_cells = schema.n_cells();
    let mut sums = vec![0.0; n_cells * levels];
    let mut sq_sums = vec![0.0; n_cells * levels];
    let mut counts = vec![0usize; n_cells];
    for r in &gold.records {
        let i = r.cell * levels + r.y.index();
        sums[i] += r.weight;
        sq_sums[i] += r.weight * r.weight;
        counts[r.cell] += 1;
    }
    let nf = n as f64;
    let factor = nf / (nf - 1.0);
    let total_sq: f64 = sq_sums.iter().sum();
    let cells = (0..n_cells)
        .map(|c| {
            let t = &sums[c * levels..(c + 1) * levels];
            let s2 = &sq_sums[c * levels..(c + 1) * levels];
            let sigma = DMatrix::from_fn(levels, levels, |k, l| {
                if k == l {
                    (factor * (s2[k] - t[k] * t[k] / nf)).max(0.0)
                } else {
                    -t[k] * t[l] / (nf - 1.0)
                }
            });
            CellTotals {
                t_hat: t.to_vec(),
                sigma_hat: sigma,
                records: counts[c],
                mean_sq_weight: if counts[c] > 0 {
                    s2.iter().sum::<f64>() / counts[c] as f64
                } else {
                    0.0
                },
            }
        })
        .collect::<Vec<_>>();
    let est = CellTotalsEstimate {
        levels,
        sample_size: n,
        cells,
        mean_sq_weight: total_sq / nf,
    };
    let empty = est.empty_cells();
    if !empty.is_empty() {
        log::warn!("{} cell(s) have no gold records: {:?}", empty.len(), empty);
    }
    Ok(est)
}

/// Weighted record count per cell of the error-prone file and its
/// with-replacement variance, i.e. T̂_{x+} and σ̂²(T̂_{x+}).
pub fn estimate_reported_cell_totals(data: &ErrorProneDataset, schema: &Schema) -> Vec<(f64, f64)> {
    let n = data.len() as f64;
    let mut out = vec![(0.0, 0.0); schema.n_cells()];
    for r in &data.records {
        out[r.cell].0 += r.weight;
        out[r.cell].1 += r.weight * r.weight;
    }
    if n < 2.0 {
        return out.into_iter().map(|(t, _)| (t, 0.0)).collect();
    }
    out.into_iter()
        .map(|(t, s2)| (t, (n / (n - 1.0) * (s2 - t * t / n)).max(0.0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GoldRecord;
    use crate::schema::{Covariate, Level};

    fn schema(levels: usize) -> Schema {
        Schema::new(vec![Covariate::new("a", 2)], levels, 2).unwrap()
    }

    fn rec(cell: usize, y: usize, w: f64) -> GoldRecord {
        GoldRecord {
            cell,
            y: Level::from_index(y),
            weight: w,
        }
    }

    /// Direct evaluation of the double sums, one record at a time.
    fn brute_force(gold: &GoldDataset, cell: usize, k: usize, l: usize) -> (f64, f64) {
        let n = gold.len() as f64;
        let a = |r: &GoldRecord, lev: usize| {
            if r.cell == cell && r.y.index() == lev {
                r.weight
            } else {
                0.0
            }
        };
        let tk: f64 = gold.records.iter().map(|r| a(r, k)).sum();
        let tl: f64 = gold.records.iter().map(|r| a(r, l)).sum();
        let cov = n / (n - 1.0)
            * gold
                .records
                .iter()
                .map(|r| (a(r, k) - tk / n) * (a(r, l) - tl / n))
                .sum::<f64>();
        (tk, cov)
    }

    #[test]
    fn two_records_same_level() {
        let gold = GoldDataset::new(vec![rec(0, 0, 2.0), rec(0, 0, 3.0)]);
        let est = estimate_cell_totals(&gold, &schema(2)).unwrap();
        assert_eq!(est.cells[0].t_hat[0], 5.0);
        assert!((est.cells[0].sigma_hat[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_single_level_and_empty_level_covariance() {
        let gold = GoldDataset::new(vec![rec(0, 0, 1.0), rec(0, 0, 1.0), rec(0, 0, 1.0), rec(1, 1, 1.0)]);
        let est = estimate_cell_totals(&gold, &schema(2)).unwrap();
        assert_eq!(est.cells[0].t_hat, vec![3.0, 0.0]);
        let (_, cov) = brute_force(&gold, 0, 0, 1);
        assert_eq!(cov, 0.0);
        assert_eq!(est.cells[0].sigma_hat[(0, 1)], 0.0);
        let (_, var) = brute_force(&gold, 0, 0, 0);
        assert!((est.cells[0].sigma_hat[(0, 0)] - var).abs() < 1e-12);
    }

    #[test]
    fn one_record_per_level_matches_direct_summation() {
        let gold = GoldDataset::new(vec![rec(0, 0, 1.0), rec(0, 1, 1.0), rec(1, 0, 1.0), rec(1, 1, 1.0)]);
        let est = estimate_cell_totals(&gold, &schema(2)).unwrap();
        let n = 4.0_f64;
        // (n/(n-1)) Σ (1{i hits} - 1/n)²: one hit, three misses
        let direct = n / (n - 1.0) * ((1.0 - 1.0 / n).powi(2) + 3.0 * (1.0 / n).powi(2));
        for c in 0..2 {
            for k in 0..2 {
                assert!((est.cells[c].sigma_hat[(k, k)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_weights() {
        use rand::Rng;
        let mut rng = crate::random::rng_stream(11, 0);
        let records: Vec<_> = (0..200)
            .map(|_| rec(rng.random_range(0..2), rng.random_range(0..3), rng.random_range(0.5..40.0)))
            .collect();
        let gold = GoldDataset::new(records);
        let s = Schema::new(vec![Covariate::new("a", 2)], 3, 2).unwrap();
        let est = estimate_cell_totals(&gold, &s).unwrap();
        for c in 0..2 {
            for k in 0..3 {
                for l in 0..3 {
                    let (t, cov) = brute_force(&gold, c, k, l);
                    assert!((est.cells[c].t_hat[k] - t).abs() < 1e-9);
                    let got = est.cells[c].sigma_hat[(k, l)];
                    assert!((got - cov).abs() <= 1e-9 * cov.abs().max(1.0), "{c} {k} {l}: {got} vs {cov}");
                }
            }
        }
    }

    #[test]
    fn unit_weight_totals_are_counts() {
        let gold = GoldDataset::new(vec![rec(0, 0, 1.0), rec(0, 1, 1.0), rec(0, 1, 1.0), rec(1, 0, 1.0)]);
        let est = estimate_cell_totals(&gold, &schema(2)).unwrap();
        let counts = gold.counts_by_cell(&schema(2));
        for c in 0..2 {
            assert_eq!(est.cells[c].t_hat.iter().sum::<f64>(), counts[c] as f64);
        }
    }

    #[test]
    fn rejects_single_record() {
        let gold = GoldDataset::new(vec![rec(0, 0, 1.0)]);
        assert!(matches!(
            estimate_cell_totals(&gold, &schema(2)),
            Err(EstimationError::TooFewRecords(1))
        ));
    }

    #[test]
    fn empty_cells_are_flagged() {
        let gold = GoldDataset::new(vec![rec(0, 0, 1.0), rec(0, 1, 2.0)]);
        let est = estimate_cell_totals(&gold, &schema(2)).unwrap();
        assert_eq!(est.empty_cells(), vec![1]);
        assert_eq!(est.cells[1].t_hat, vec![0.0, 0.0]);
        assert_eq!(est.cells[1].sigma_hat, DMatrix::zeros(2, 2));
    }
}
