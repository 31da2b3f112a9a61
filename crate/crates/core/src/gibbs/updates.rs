use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::models::{BetaPrior, CompiledErrorModel, CompiledReporting, ErrorEngine, ErrorRow, NormalPrior, ReportingKind, ReportingTables};
use crate::random::{log_gamma_draw, log_logistic, sample_dirichlet};

/// Counts of (cell, reported z, imputed y) in the current state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SufficientStats {
    pub n_cells: usize,
    pub d_z: usize,
    pub d_y: usize,
    pub counts: Vec<u64>,
}

impl SufficientStats {
    pub fn zeros(n_cells: usize, d_z: usize, d_y: usize) -> Self {
        SufficientStats {
            n_cells,
            d_z,
            d_y,
            counts: vec![0; n_cells * d_z * d_y],
        }
    }

    #[inline]
    pub fn index(&self, cell: usize, z: usize, k: usize) -> usize {
        (cell * self.d_z + z) * self.d_y + k
    }

    #[inline]
    pub fn count(&self, cell: usize, z: usize, k: usize) -> u64 {
        self.counts[self.index(cell, z, k)]
    }

    #[inline]
    pub fn row(&self, cell: usize, z: usize) -> &[u64] {
        let i = self.index(cell, z, 0);
        &self.counts[i..i + self.d_y]
    }

    pub fn row_mut(&mut self, cell: usize, z: usize) -> &mut [u64] {
        let i = self.index(cell, z, 0);
        &mut self.counts[i..i + self.d_y]
    }

    /// Records in `cell` currently imputed at `k`.
    pub fn truth_total(&self, cell: usize, k: usize) -> u64 {
        (0..self.d_z).map(|z| self.count(cell, z, k)).sum()
    }

    /// Records in `cell` imputed at `k` whose report differs from `k`.
    pub fn errors(&self, cell: usize, k: usize) -> u64 {
        let same = if k < self.d_z { self.count(cell, k, k) } else { 0 };
        self.truth_total(cell, k) - same
    }
}

/// Draw from Beta(a, b) through log-gamma variates, safe for tiny shapes
/// and extreme ratios. The result is kept strictly inside (0, 1).
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = log_gamma_draw(a, rng);
    let lb = log_gamma_draw(b, rng);
    let x = 1.0 / (1.0 + (lb - la).exp());
    x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Per-coordinate random-walk Metropolis state for logistic coefficients.
#[derive(Clone, Debug)]
pub struct MhState {
    pub log_step: Vec<f64>,
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
    /// (cell, truth) rows touched by each coefficient.
    coord_rows: Vec<Vec<usize>>,
    /// (cell, truth) of each reportable row and its coefficients.
    rows: Vec<(usize, usize, Vec<usize>)>,
}

impl MhState {
    pub fn new(error: &CompiledErrorModel, n_cells: usize, d_z: usize, step: f64) -> Self {
        let mut rows = Vec::new();
        let mut coord_rows = vec![Vec::new(); error.n_params()];
        for cell in 0..n_cells {
            for k in 0..d_z {
                if let ErrorRow::Linear(active) = error.row(cell, k) {
                    for &j in active {
                        coord_rows[j].push(rows.len());
                    }
                    rows.push((cell, k, active.clone()));
                }
            }
        }
        let p = error.n_params();
        MhState {
            log_step: vec![step.ln(); p],
            accepted: vec![0; p],
            proposed: vec![0; p],
            coord_rows,
            rows,
        }
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.proposed)
            .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    pub fn reset_counters(&mut self) {
        self.accepted.iter_mut().for_each(|a| *a = 0);
        self.proposed.iter_mut().for_each(|a| *a = 0);
    }
}

pub const TARGET_ACCEPTANCE: f64 = 0.30;

/// One update of the error-model parameters given the current counts.
///
/// Group-saturated: rate_j ~ Beta(a_j + errors_j, b_j + correct_j) over
/// records whose imputed level can be reported. Logistic: one sweep of
/// per-coordinate random-walk Metropolis; with `adapt_gain` set, each log
/// step size moves toward 30% acceptance by that gain.
pub fn update_error_params<R: Rng + ?Sized>(
    engine: &ErrorEngine,
    error: &CompiledErrorModel,
    stats: &SufficientStats,
    params: &mut [f64],
    mh: Option<&mut MhState>,
    adapt_gain: Option<f64>,
    rng: &mut R,
) {
    match engine {
        ErrorEngine::GroupSaturated { priors } => update_group_rates(priors, error, stats, params, rng),
        ErrorEngine::GeneralLogistic { priors } => {
            let mh = mh.expect("logistic engine needs Metropolis state");
            update_logistic(priors, stats, params, mh, adapt_gain, rng)
        }
    }
}

fn update_group_rates<R: Rng + ?Sized>(
    priors: &[BetaPrior],
    error: &CompiledErrorModel,
    stats: &SufficientStats,
    rates: &mut [f64],
    rng: &mut R,
) {
    let mut wrong = vec![0u64; priors.len()];
    let mut right = vec![0u64; priors.len()];
    for cell in 0..stats.n_cells {
        for k in 0..stats.d_z {
            if let ErrorRow::Group(j) = error.row(cell, k) {
                let e = stats.errors(cell, k);
                wrong[*j] += e;
                right[*j] += stats.truth_total(cell, k) - e;
            }
        }
    }
    for (j, p) in priors.iter().enumerate() {
        rates[j] = sample_beta(p.a + wrong[j] as f64, p.b + right[j] as f64, rng);
    }
}

fn update_logistic<R: Rng + ?Sized>(
    priors: &[NormalPrior],
    stats: &SufficientStats,
    beta: &mut [f64],
    mh: &mut MhState,
    adapt_gain: Option<f64>,
    rng: &mut R,
) {
    let tallies: Vec<(f64, f64)> = mh
        .rows
        .iter()
        .map(|(cell, k, _)| {
            let e = stats.errors(*cell, *k) as f64;
            (e, stats.truth_total(*cell, *k) as f64 - e)
        })
        .collect();
    let mut eta: Vec<f64> = mh.rows.iter().map(|(_, _, act)| act.iter().map(|&j| beta[j]).sum()).collect();
    let loglik = |r: usize, eta: f64| {
        let (e, c) = tallies[r];
        let mut v = 0.0;
        if e > 0.0 {
            v += e * log_logistic(eta);
        }
        if c > 0.0 {
            v += c * log_logistic(-eta);
        }
        v
    };
    for j in 0..beta.len() {
        let step = mh.log_step[j].exp();
        let delta: f64 = step * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        let proposal = beta[j] + delta;
        let mut log_ratio = priors[j].log_density(proposal) - priors[j].log_density(beta[j]);
        for &r in &mh.coord_rows[j] {
            log_ratio += loglik(r, eta[r] + delta) - loglik(r, eta[r]);
        }
        let u: f64 = rng.random();
        let accept = log_ratio >= 0.0 || u.ln() < log_ratio;
        mh.proposed[j] += 1;
        if accept {
            mh.accepted[j] += 1;
            beta[j] = proposal;
            for &r in &mh.coord_rows[j] {
                eta[r] += delta;
            }
        }
        if let Some(gain) = adapt_gain {
            let a = if accept { 1.0 } else { 0.0 };
            mh.log_step[j] = (mh.log_step[j] + gain * (a - TARGET_ACCEPTANCE)).clamp(-12.0, 5.0);
        }
    }
}

/// Draws every categorical reporting table from Dirichlet(α + counts of
/// reported values among erroneous records with that truth). Uniform
/// reporting has nothing to update.
pub fn update_reporting_params<R: Rng + ?Sized>(
    rep: &CompiledReporting,
    stats: &SufficientStats,
    tables: &mut ReportingTables,
    rng: &mut R,
) {
    if rep.kind == ReportingKind::Uniform {
        return;
    }
    let (d_y, d_z) = (rep.d_y, rep.d_z);
    let mut counts = vec![0u64; rep.n_groups * d_y * d_z];
    for cell in 0..stats.n_cells {
        let g = rep.group_of_cell[cell];
        for z in 0..d_z {
            for k in 0..d_y {
                if k != z {
                    counts[(g * d_y + k) * d_z + z] += stats.count(cell, z, k);
                }
            }
        }
    }
    let mut alpha = Vec::with_capacity(d_z);
    let mut draw = vec![0.0; d_z];
    for g in 0..rep.n_groups {
        for k in 0..d_y {
            let prior = rep.alpha_row(g, k);
            alpha.clear();
            let support: Vec<usize> = (0..d_z).filter(|&l| l != k).collect();
            for &l in &support {
                alpha.push(prior[l] + counts[(g * d_y + k) * d_z + l] as f64);
            }
            sample_dirichlet(&alpha, rng, &mut draw[..support.len()]);
            let row = tables.row_mut(g, k);
            row.iter_mut().for_each(|p| *p = 0.0);
            for (i, &l) in support.iter().enumerate() {
                row[l] = draw[i];
            }
        }
    }
}
