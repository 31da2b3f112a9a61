use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::lognormal::{check_covariance, moment_match_lognormal, sqrt_factor, LogNormalParams};
use super::totals::{CellTotals, CellTotalsEstimate};
use crate::error::{DataError, Error, EstimationError};

/// Total used for a (cell, level) pair without gold records.
pub const ZERO_TOTAL_FLOOR: f64 = 0.5;

/// Log-normal approximate posterior of one cell's population totals.
#[derive(Clone, Debug, PartialEq)]
pub struct CellPosterior {
    pub mu: DVector<f64>,
    pub tau: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl CellPosterior {
    pub fn new(mu: DVector<f64>, tau: DMatrix<f64>) -> Self {
        let factor = sqrt_factor(&tau);
        CellPosterior { mu, tau, factor }
    }

    pub fn from_params(p: LogNormalParams) -> Self {
        Self::new(p.mu, p.tau)
    }

    /// E[T_x] = exp(μ + diag(τ)/2).
    pub fn mean_totals(&self) -> Vec<f64> {
        (0..self.mu.len())
            .map(|j| (self.mu[j] + self.tau[(j, j)] / 2.0).exp())
            .collect()
    }

    /// Shares implied by the mean totals; the gold-side reference for
    /// coverage checks.
    pub fn mean_shares(&self) -> Vec<f64> {
        let t = self.mean_totals();
        let s: f64 = t.iter().sum();
        t.into_iter().map(|v| v / s).collect()
    }

    /// One draw of the totals T_x themselves.
    pub fn draw_totals_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.draw_log_into(rng, out);
        for v in out.iter_mut() {
            *v = v.exp();
        }
    }

    fn draw_log_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.mu.len();
        debug_assert_eq!(out.len(), d);
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for j in 0..d {
            let mut v = self.mu[j];
            for (i, zi) in z.iter().enumerate() {
                v += self.factor[(j, i)] * zi;
            }
            out[j] = v;
        }
    }

    /// Draws θ* by exponentiating a Normal(μ, τ) draw and normalizing.
    pub fn draw_theta_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.draw_log_into(rng, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        normalize_log_weights(out, max);
    }
}

/// exp-normalizes log weights in place, keeping every entry strictly positive.
pub(crate) fn normalize_log_weights(out: &mut [f64], max: f64) {
    let mut sum = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp().max(f64::MIN_POSITIVE);
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Per-cell log-normal posteriors over the true-value totals T_x. A cell may
/// be absent, for instance when neither file observed it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueDataPosterior {
    pub levels: usize,
    pub cells: Vec<Option<CellPosterior>>,
}

impl TrueDataPosterior {
    /// Moment-matches every cell of a gold-file estimate. (x, k) pairs with a
    /// zero total get [`ZERO_TOTAL_FLOOR`] with variance equal to the cell's
    /// mean squared weight (the file-wide one for empty cells).
    pub fn from_totals(totals: &CellTotalsEstimate) -> Result<Self, EstimationError> {
        let mut floored = 0;
        let cells = totals
            .cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let (t, s, n) = apply_zero_floor(cell, totals.mean_sq_weight);
                floored += n;
                moment_match_lognormal(&t, &s)
                    .map(|p| {
                        if p.projected {
                            log::debug!("cell {c}: tau projected onto the PSD cone");
                        }
                        Some(CellPosterior::from_params(p))
                    })
                    .map_err(|e| e.in_cell(c))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if floored > 0 {
            log::warn!("{floored} (cell, level) total(s) were zero and got the continuity floor");
        }
        Ok(TrueDataPosterior {
            levels: totals.levels,
            cells,
        })
    }

    /// Posterior that always returns `theta[c]` (τ = 0). Zero entries become
    /// negligible but positive.
    pub fn fixed(theta: &[Vec<f64>]) -> Self {
        let levels = theta.first().map_or(0, Vec::len);
        let cells = theta
            .iter()
            .map(|row| {
                let mu = DVector::from_iterator(levels, row.iter().map(|&p| if p > 0.0 { p.ln() } else { -745.0 }));
                Some(CellPosterior::new(mu, DMatrix::zeros(levels, levels)))
            })
            .collect();
        TrueDataPosterior { levels, cells }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, code: usize) -> Option<&CellPosterior> {
        self.cells.get(code).and_then(Option::as_ref)
    }

    /// Fails on the first cell in `present` without a posterior.
    pub fn check_covers(&self, present: &[bool]) -> Result<(), EstimationError> {
        for (c, &p) in present.iter().enumerate() {
            if p && self.cell(c).is_none() {
                return Err(EstimationError::MissingCell(c));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(&self.to_file())
            .map_err(|source| DataError::Json { path: path.to_path_buf(), source })?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        }
        std::fs::write(path, text + "\n").map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        let file: PosteriorFile =
            serde_json::from_str(&text).map_err(|source| DataError::Json { path: path.to_path_buf(), source })?;
        Ok(Self::from_file(file)?)
    }

    fn to_file(&self) -> PosteriorFile {
        PosteriorFile {
            format: FORMAT.to_string(),
            levels: self.levels,
            n_cells: self.cells.len(),
            cells: self
                .cells
                .iter()
                .enumerate()
                .filter_map(|(c, p)| p.as_ref().map(|p| (c, p)))
                .map(|(c, p)| PosteriorRecord {
                    cell: c,
                    mu: p.mu.iter().copied().collect(),
                    tau_lower: Some(lower_triangle(&p.tau)),
                    tau: None,
                })
                .collect(),
        }
    }

    fn from_file(file: PosteriorFile) -> Result<Self, EstimationError> {
        if file.format != FORMAT {
            return Err(EstimationError::Dimension(format!("unknown posterior format `{}`", file.format)));
        }
        let d = file.levels;
        let mut cells = vec![None; file.n_cells];
        for rec in file.cells {
            if rec.cell >= file.n_cells {
                return Err(EstimationError::Dimension(format!("cell {} out of range", rec.cell)));
            }
            if rec.mu.len() != d || rec.mu.iter().any(|m| !m.is_finite()) {
                return Err(EstimationError::Dimension(format!("cell {}: mu must have {d} finite entries", rec.cell)));
            }
            let tau = match (rec.tau_lower, rec.tau) {
                (Some(lower), None) => {
                    if lower.len() != d * (d + 1) / 2 {
                        return Err(EstimationError::Dimension(format!(
                            "cell {}: tau_lower must have {} entries",
                            rec.cell,
                            d * (d + 1) / 2
                        )));
                    }
                    from_lower_triangle(&lower, d)
                }
                (None, Some(rows)) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(EstimationError::Dimension(format!("cell {}: tau must be {d}x{d}", rec.cell)));
                    }
                    DMatrix::from_fn(d, d, |i, j| rows[i][j])
                }
                _ => {
                    return Err(EstimationError::Dimension(format!(
                        "cell {}: give exactly one of tau_lower or tau",
                        rec.cell
                    )))
                }
            };
            check_covariance(&tau, d).map_err(|e| e.in_cell(rec.cell))?;
            let eig = SymmetricEigen::new(tau.clone());
            let scale = tau.abs().max().max(1.0);
            if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
                return Err(EstimationError::BadCovariance(format!("cell {}: tau is not positive semidefinite", rec.cell)));
            }
            cells[rec.cell] = Some(CellPosterior::new(DVector::from_vec(rec.mu), tau));
        }
        Ok(TrueDataPosterior { levels: d, cells })
    }
}

const FORMAT: &str = "mefuse-lognormal-posterior-v1";

/// On-disk layout: one record per cell with μ and the row-major lower
/// triangle of τ (`tau[0][0], tau[1][0], tau[1][1], tau[2][0], ...`). A full
/// `tau` matrix is accepted on input and must be symmetric.
#[derive(Serialize, Deserialize)]
struct PosteriorFile {
    format: String,
    levels: usize,
    n_cells: usize,
    cells: Vec<PosteriorRecord>,
}

#[derive(Serialize, Deserialize)]
struct PosteriorRecord {
    cell: usize,
    mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<Vec<Vec<f64>>>,
}

fn lower_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn from_lower_triangle(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut it = v.iter();
    for i in 0..d {
        for j in 0..=i {
            let x = *it.next().unwrap();
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}

pub(crate) fn apply_zero_floor(cell: &CellTotals, global_msw: f64) -> (Vec<f64>, DMatrix<f64>, usize) {
    let mut t = cell.t_hat.clone();
    let mut s = cell.sigma_hat.clone();
    let msw = if cell.records > 0 { cell.mean_sq_weight } else { global_msw };
    let mut n = 0;
    for k in 0..t.len() {
        if t[k] <= 0.0 {
            n += 1;
            t[k] = ZERO_TOTAL_FLOOR;
            s.row_mut(k).fill(0.0);
            s.column_mut(k).fill(0.0);
            s[(k, k)] = msw;
        }
    }
    (t, s, n)
}

/// One θ*_x draw for `cell`: Normal(μ_x, τ_x), exponentiate, normalize.
pub fn draw_theta<R: Rng + ?Sized>(posterior: &TrueDataPosterior, cell: usize, rng: &mut R) -> Result<Vec<f64>, EstimationError> {
    let p = posterior.cell(cell).ok_or(EstimationError::MissingCell(cell))?;
    let mut out = vec![0.0; posterior.levels];
    p.draw_theta_into(rng, &mut out);
    Ok(out)
}

impl EstimationError {
    pub(crate) fn in_cell(self, cell: usize) -> Self {
        match self {
            EstimationError::NonPositiveTotal { level, value, .. } => EstimationError::NonPositiveTotal { cell, level, value },
            EstimationError::BadCovariance(m) => EstimationError::BadCovariance(format!("cell {cell}: {m}")),
            EstimationError::Dimension(m) => EstimationError::Dimension(format!("cell {cell}: {m}")),
            other => other,
        }
    }
}
