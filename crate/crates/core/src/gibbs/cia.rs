use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::imputation::{ImputationMethod, ImputationSet, Provenance};
use crate::data::ErrorProneDataset;
use crate::design::TrueDataPosterior;
use crate::error::{EstimationError, Error};
use crate::random::{rng_stream, sample_multinomial};
use crate::schema::{Level, Schema};

/// Imputes true values ignoring the reports: within each cell, imputation
/// `m` draws θ* from the posterior and spreads multinomial counts over the
/// cell's records in random order. Imputation `m` uses stream `m + 1` of
/// `seed`, so results do not depend on thread count.
pub fn impute_cia(
    schema: &Schema,
    data: Arc<ErrorProneDataset>,
    posterior: &TrueDataPosterior,
    imputations: usize,
    seed: u64,
) -> Result<ImputationSet, Error> {
    if posterior.levels != schema.true_levels || posterior.n_cells() != schema.n_cells() {
        return Err(EstimationError::Dimension("posterior does not match the schema".into()).into());
    }
    posterior.check_covers(&data.cells_present(schema))?;
    let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); schema.n_cells()];
    for (i, r) in data.records.iter().enumerate() {
        by_cell[r.cell].push(i);
    }
    let d_y = schema.true_levels;
    let imputed = (0..imputations)
        .into_par_iter()
        .map(|m| {
            let mut rng = rng_stream(seed, m as u64 + 1);
            let mut ys = vec![Level::default(); data.len()];
            let mut theta = vec![0.0; d_y];
            let mut counts = vec![0u64; d_y];
            let mut labels = Vec::new();
            for (c, members) in by_cell.iter().enumerate() {
                if members.is_empty() {
                    continue;
                }
                posterior.cell(c).expect("coverage checked").draw_theta_into(&mut rng, &mut theta);
                sample_multinomial(members.len() as u64, &theta, &mut rng, &mut counts);
                labels.clear();
                for (k, &n) in counts.iter().enumerate() {
                    labels.extend(std::iter::repeat_n(Level::from_index(k), n as usize));
                }
                labels.shuffle(&mut rng);
                for (&i, &l) in members.iter().zip(&labels) {
                    ys[i] = l;
                }
            }
            ys
        })
        .collect();
    Ok(ImputationSet {
        schema: schema.clone(),
        data,
        imputed,
        provenance: Provenance {
            method: ImputationMethod::Cia,
            label: "cia".into(),
            seed,
            config: None,
            model: None,
            digests: BTreeMap::new(),
        },
    })
}
