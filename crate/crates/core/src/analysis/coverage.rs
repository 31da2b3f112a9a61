use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rubin::{rubin_combine, MIEstimate};
use crate::design::TrueDataPosterior;
use crate::error::{AnalysisError, Error, EstimationError};
use crate::gibbs::ImputationSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub cell: usize,
    pub level: usize,
    pub gold_share: f64,
    pub estimate: MIEstimate,
    pub covered: bool,
}

/// Imputed within-cell shares against gold-file shares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub entries: Vec<CoverageEntry>,
    pub total_covered: usize,
    pub total_cells: usize,
}

impl CoverageReport {
    pub fn rate(&self) -> f64 {
        self.total_covered as f64 / self.total_cells as f64
    }
}

/// Compares imputed shares with the posterior-mean shares of the gold file.
pub fn coverage_diagnostic(set: &ImputationSet, gold: &TrueDataPosterior) -> Result<CoverageReport, Error> {
    if gold.levels != set.schema.true_levels || gold.n_cells() != set.schema.n_cells() {
        return Err(EstimationError::Dimension("gold posterior does not match the imputation schema".into()).into());
    }
    let shares: Vec<Option<Vec<f64>>> = (0..gold.n_cells()).map(|c| gold.cell(c).map(|p| p.mean_shares())).collect();
    coverage_against_shares(set, &shares)
}

/// As [`coverage_diagnostic`] with explicit gold shares per cell. Cells
/// without gold shares or without error-prone records are not evaluated.
///
/// Each (cell, level) share is a weighted ratio within the cell with a
/// linearized variance, combined across imputations.
pub fn coverage_against_shares(set: &ImputationSet, gold: &[Option<Vec<f64>>]) -> Result<CoverageReport, Error> {
    let s = &set.schema;
    let d_y = s.true_levels;
    let n = set.n() as f64;
    if n < 2.0 {
        return Err(AnalysisError::Estimand { name: "coverage".into(), reason: "needs at least two records".into() }.into());
    }
    let scale = n / (n - 1.0);
    let mut by_cell = vec![Vec::new(); s.n_cells()];
    for (i, r) in set.data.records.iter().enumerate() {
        by_cell[r.cell].push(i);
    }
    // per imputation, per cell: (q, u) for each level
    let per: Vec<Vec<Vec<(f64, f64)>>> = (0..set.m())
        .into_par_iter()
        .map(|m| {
            let ys = &set.imputed[m];
            by_cell
                .iter()
                .map(|members| {
                    let w: f64 = members.iter().map(|&i| set.data.records[i].weight).sum();
                    if members.is_empty() || !(w > 0.0) {
                        return Vec::new();
                    }
                    let mut share = vec![0.0; d_y];
                    for &i in members {
                        share[ys[i].index()] += set.data.records[i].weight / w;
                    }
                    (0..d_y)
                        .map(|k| {
                            let sq: f64 = members
                                .iter()
                                .map(|&i| {
                                    let x = if ys[i].index() == k { 1.0 } else { 0.0 };
                                    (set.data.records[i].weight * (x - share[k]) / w).powi(2)
                                })
                                .sum();
                            (share[k], scale * sq)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut entries = Vec::new();
    for (c, g) in gold.iter().enumerate() {
        let Some(g) = g else { continue };
        if by_cell[c].is_empty() || per.first().is_some_and(|p| p[c].is_empty()) {
            continue;
        }
        for (k, &gold_share) in g.iter().enumerate().take(d_y) {
            let est: Vec<(f64, f64)> = per.iter().map(|p| p[c][k]).collect();
            let estimate = rubin_combine(&est)?;
            entries.push(CoverageEntry {
                cell: c,
                level: k,
                gold_share,
                covered: estimate.contains(gold_share),
                estimate,
            });
        }
    }
    let total_covered = entries.iter().filter(|e| e.covered).count();
    Ok(CoverageReport { total_cells: entries.len(), total_covered, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ErrorProneDataset, ErrorProneRecord};
    use crate::gibbs::impute_cia;
    use crate::schema::{Covariate, Level, Schema};
    use std::sync::Arc;

    #[test]
    fn consistent_imputations_cover_and_corrupted_do_not() {
        let s = Schema::new(vec![Covariate::new("a", 4)], 5, 4).unwrap();
        let theta: Vec<Vec<f64>> = (0..4).map(|c| {
            let mut t = vec![0.1 + 0.05 * c as f64, 0.3, 0.2, 0.15, 0.0];
            t[4] = 1.0 - t[..4].iter().sum::<f64>();
            t
        }).collect();
        let post = TrueDataPosterior::fixed(&theta);
        let records = (0..4000)
            .map(|i| ErrorProneRecord { cell: i % 4, z: Level::from_index(0), weight: 1.0 + (i % 3) as f64, extras: vec![] })
            .collect();
        let data = Arc::new(ErrorProneDataset::new(vec![], records));
        let mut set = impute_cia(&s, data, &post, 20, 1).unwrap();
        let rep = coverage_diagnostic(&set, &post).unwrap();
        assert_eq!(rep.total_cells, 20);
        assert!(rep.total_covered >= 17, "{}", rep.total_covered);
        for ys in &mut set.imputed {
            ys.iter_mut().for_each(|y| *y = Level::from_index(0));
        }
        let bad = coverage_diagnostic(&set, &post).unwrap();
        assert!(bad.total_covered <= 2, "{}", bad.total_covered);
    }
}
