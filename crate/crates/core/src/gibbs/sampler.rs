use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditional::{conditional_weights, ModelState};
use super::config::{GibbsConfig, SweepMode, ThetaRedraw};
use super::imputation::{ImputationMethod, ImputationSet, Provenance};
use super::updates::{update_error_params, update_reporting_params, MhState, SufficientStats};
use crate::data::ErrorProneDataset;
use crate::design::TrueDataPosterior;
use crate::error::{EstimationError, Error, ModelError, SamplerError};
use crate::models::{check_identifiability, CompiledErrorModel, CompiledReporting, ErrorEngine, MeasurementModel, ReportingTables};
use crate::random::{rng_stream, sample_categorical, sample_multinomial, SeededRng};
use crate::schema::{Level, Schema};

/// Latent state of the chain. In lumped mode the true values live in
/// `stats` only; `y` is filled in per-record mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub stats: SufficientStats,
    pub y: Option<Vec<Level>>,
    pub error_params: Vec<f64>,
    pub tables: ReportingTables,
    /// θ*_x, `d_Y` entries per cell; zero for cells without records.
    pub theta: Vec<f64>,
    pub iteration: usize,
}

/// Parameter values at each saved iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamTrace {
    pub iterations: Vec<usize>,
    pub error_params: Vec<Vec<f64>>,
    pub reporting: Vec<ReportingTables>,
    /// Metropolis acceptance after adaptation stopped, per coefficient.
    pub acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GibbsOutput {
    pub imputations: ImputationSet,
    pub trace: ParamTrace,
    pub final_state: ChainState,
}

/// Data-augmentation sampler for the true values of the error-prone file.
///
/// Each sweep redraws θ* according to the configured policy, draws the true
/// values from their full conditionals, then updates the error-model and
/// reporting parameters. θ is never updated from the error-prone file.
pub struct GibbsSampler<'a> {
    schema: &'a Schema,
    data: Arc<ErrorProneDataset>,
    posterior: &'a TrueDataPosterior,
    model: &'a MeasurementModel,
    config: GibbsConfig,
    fixed_error: Option<Vec<f64>>,
    fixed_reporting: Option<ReportingTables>,
    label: String,
    digests: BTreeMap<String, String>,
}

struct Prepared {
    error: CompiledErrorModel,
    reporting: CompiledReporting,
    /// Record indices per (cell, z).
    groups: Vec<Vec<usize>>,
    present: Vec<usize>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        schema: &'a Schema,
        data: Arc<ErrorProneDataset>,
        posterior: &'a TrueDataPosterior,
        model: &'a MeasurementModel,
        config: GibbsConfig,
    ) -> Self {
        GibbsSampler {
            schema,
            data,
            posterior,
            model,
            config,
            fixed_error: None,
            fixed_reporting: None,
            label: "gibbs".into(),
            digests: BTreeMap::new(),
        }
    }

    /// Holds the error-model parameters at `params` instead of updating them.
    pub fn fix_error_params(mut self, params: Vec<f64>) -> Self {
        self.fixed_error = Some(params);
        self
    }

    /// Holds the reporting tables at `tables` instead of updating them.
    pub fn fix_reporting(mut self, tables: ReportingTables) -> Self {
        self.fixed_reporting = Some(tables);
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn digest(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.digests.insert(name.into(), value.into());
        self
    }

    fn prepare(&self) -> Result<Prepared, Error> {
        self.config.validate()?;
        let s = self.schema;
        if self.posterior.levels != s.true_levels || self.posterior.n_cells() != s.n_cells() {
            return Err(EstimationError::Dimension(format!(
                "posterior has {} cells x {} levels, schema needs {} x {}",
                self.posterior.n_cells(),
                self.posterior.levels,
                s.n_cells(),
                s.true_levels
            ))
            .into());
        }
        let present_mask = self.data.cells_present(s);
        self.posterior.check_covers(&present_mask)?;
        let error = self.model.error.compile(s)?;
        let reporting = self.model.reporting.compile(s)?;
        let report = check_identifiability(s, &self.model.error, &self.model.reporting)?;
        if !report.is_ok() {
            if self.config.allow_overparameterized {
                log::warn!("running an over-parameterized model:\n{report}");
            } else {
                return Err(SamplerError::Overparameterized {
                    requested: report.requested_params,
                    max: report.max_error_reporting_params,
                }
                .into());
            }
        }
        if let Some(p) = &self.fixed_error {
            if p.len() != error.n_params() {
                return Err(ModelError::ParamLength { expected: error.n_params(), got: p.len() }.into());
            }
        }
        if let Some(t) = &self.fixed_reporting {
            if (t.n_groups, t.d_y, t.d_z) != (reporting.n_groups, reporting.d_y, reporting.d_z) {
                return Err(ModelError::ReportingSpec("fixed tables do not match the reporting spec".into()).into());
            }
        }
        let d_z = s.reported_levels;
        let mut groups = vec![Vec::new(); s.n_cells() * d_z];
        for (i, r) in self.data.records.iter().enumerate() {
            groups[r.cell * d_z + r.z.index()].push(i);
        }
        let present = (0..s.n_cells()).filter(|&c| present_mask[c]).collect();
        Ok(Prepared { error, reporting, groups, present })
    }

    pub fn run(&self) -> Result<GibbsOutput, Error> {
        let prep = self.prepare()?;
        let cfg = &self.config;
        let s = self.schema;
        let (n_cells, d_y, d_z) = (s.n_cells(), s.true_levels, s.reported_levels);
        let mut rng = rng_stream(cfg.seed, 0);

        // y = z to start
        let mut stats = SufficientStats::zeros(n_cells, d_z, d_y);
        for c in 0..n_cells {
            for z in 0..d_z {
                stats.row_mut(c, z)[z] = prep.groups[c * d_z + z].len() as u64;
            }
        }
        let mut y: Option<Vec<Level>> = match cfg.sweep {
            SweepMode::PerRecord => Some(self.data.records.iter().map(|r| r.z).collect()),
            SweepMode::Lumped => None,
        };
        let mut error_params = match (&self.fixed_error, &self.model.error.engine) {
            (Some(p), _) => p.clone(),
            (None, ErrorEngine::GroupSaturated { priors }) => priors.iter().map(|p| p.mean()).collect(),
            (None, ErrorEngine::GeneralLogistic { priors }) => priors.iter().map(|p| p.mean).collect(),
        };
        let mut mh = match &self.model.error.engine {
            ErrorEngine::GeneralLogistic { .. } => Some(MhState::new(&prep.error, n_cells, d_z, cfg.mh_step)),
            ErrorEngine::GroupSaturated { .. } => None,
        };
        let mut tables = match &self.fixed_reporting {
            Some(t) => t.clone(),
            None => prep.reporting.prior_mean_tables(),
        };
        self.update_params(&prep, &stats, &mut error_params, &mut mh, &mut tables, Some(1.0), &mut rng);

        let mut theta = vec![0.0; n_cells * d_y];
        let mut probs = vec![0.0; d_y];
        let mut cond = vec![0.0; n_cells * d_z * d_y];
        let mut imputed = Vec::with_capacity(cfg.imputations);
        let mut trace = ParamTrace::default();
        let burn_in = cfg.burn_in();
        let stride = cfg.stride();
        let adapt_until = cfg.adapt_until();
        let mut next_save = 0;
        for t in 0..cfg.iterations {
            let redraw = match cfg.theta_redraw {
                ThetaRedraw::PerIteration => true,
                ThetaRedraw::PerImputation => t == 0 || (t >= burn_in && (t - burn_in) % stride == 0),
            };
            if redraw {
                for &c in &prep.present {
                    let p = self.posterior.cell(c).expect("coverage checked");
                    p.draw_theta_into(&mut rng, &mut theta[c * d_y..(c + 1) * d_y]);
                }
            }
            let state = ModelState {
                error: &prep.error,
                error_params: &error_params,
                reporting: &prep.reporting,
                tables: &tables,
            };
            for &c in &prep.present {
                for z in 0..d_z {
                    let members = &prep.groups[c * d_z + z];
                    if members.is_empty() {
                        continue;
                    }
                    let sum = conditional_weights(c, z, &theta[c * d_y..(c + 1) * d_y], &state, &mut probs);
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(SamplerError::DegenerateConditional { record: members[0] + 1 }.into());
                    }
                    probs.iter_mut().for_each(|p| *p /= sum);
                    match cfg.sweep {
                        SweepMode::Lumped => sample_multinomial(members.len() as u64, &probs, &mut rng, stats.row_mut(c, z)),
                        SweepMode::PerRecord => {
                            let i = (c * d_z + z) * d_y;
                            cond[i..i + d_y].copy_from_slice(&probs);
                        }
                    }
                }
            }
            if let Some(ys) = y.as_mut() {
                stats.counts.iter_mut().for_each(|x| *x = 0);
                for (r, yi) in self.data.records.iter().zip(ys.iter_mut()) {
                    let i = (r.cell * d_z + r.z.index()) * d_y;
                    let k = sample_categorical(&cond[i..i + d_y], &mut rng);
                    *yi = Level::from_index(k);
                    stats.row_mut(r.cell, r.z.index())[k] += 1;
                }
            }
            let gain = (t < adapt_until).then(|| ((t + 1) as f64).powf(-0.6));
            self.update_params(&prep, &stats, &mut error_params, &mut mh, &mut tables, gain, &mut rng);
            if t + 1 == adapt_until {
                if let Some(m) = mh.as_mut() {
                    m.reset_counters();
                }
            }
            if next_save < cfg.imputations && t == cfg.save_iteration(next_save) {
                let ys = match &y {
                    Some(ys) => ys.clone(),
                    None => self.materialize(&prep, &stats, &mut rng),
                };
                imputed.push(ys);
                trace.iterations.push(t);
                trace.error_params.push(error_params.clone());
                trace.reporting.push(tables.clone());
                next_save += 1;
            }
            if cfg.iterations >= 10 && (t + 1) % (cfg.iterations / 10) == 0 {
                log::debug!("gibbs: {} of {} sweeps", t + 1, cfg.iterations);
            }
        }
        if let Some(m) = &mh {
            trace.acceptance = m.acceptance_rates();
            trace.step_sizes = m.log_step.iter().map(|l| l.exp()).collect();
            log::info!("metropolis acceptance after adaptation: {:?}", trace.acceptance);
        }
        let provenance = Provenance {
            method: ImputationMethod::Gibbs,
            label: self.label.clone(),
            seed: cfg.seed,
            config: Some(cfg.clone()),
            model: Some(self.model.clone()),
            digests: self.digests.clone(),
        };
        Ok(GibbsOutput {
            imputations: ImputationSet {
                schema: s.clone(),
                data: Arc::clone(&self.data),
                imputed,
                provenance,
            },
            trace,
            final_state: ChainState {
                stats,
                y,
                error_params,
                tables,
                theta,
                iteration: cfg.iterations,
            },
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn update_params(
        &self,
        prep: &Prepared,
        stats: &SufficientStats,
        error_params: &mut [f64],
        mh: &mut Option<MhState>,
        tables: &mut ReportingTables,
        gain: Option<f64>,
        rng: &mut SeededRng,
    ) {
        if self.fixed_error.is_none() {
            update_error_params(&self.model.error.engine, &prep.error, stats, error_params, mh.as_mut(), gain, rng);
        }
        if self.fixed_reporting.is_none() {
            update_reporting_params(&prep.reporting, stats, tables, rng);
        }
    }

    /// Spreads each (cell, z) group's counts over its records in random order.
    fn materialize(&self, prep: &Prepared, stats: &SufficientStats, rng: &mut impl Rng) -> Vec<Level> {
        let d_z = self.schema.reported_levels;
        let mut ys = vec![Level::default(); self.data.len()];
        let mut labels = Vec::new();
        for (gi, members) in prep.groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let (c, z) = (gi / d_z, gi % d_z);
            labels.clear();
            for (k, &n) in stats.row(c, z).iter().enumerate() {
                labels.extend(std::iter::repeat_n(Level::from_index(k), n as usize));
            }
            labels.shuffle(rng);
            for (&i, &l) in members.iter().zip(&labels) {
                ys[i] = l;
            }
        }
        ys
    }
}

/// Runs the sampler with every parameter free.
pub fn run_gibbs(
    schema: &Schema,
    data: Arc<ErrorProneDataset>,
    posterior: &TrueDataPosterior,
    model: &MeasurementModel,
    config: GibbsConfig,
) -> Result<GibbsOutput, Error> {
    GibbsSampler::new(schema, data, posterior, model, config).run()
}
