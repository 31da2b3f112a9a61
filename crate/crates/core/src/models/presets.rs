use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::error_model::{BetaPrior, DesignTerm, ErrorModelSpec, NormalPrior};
use super::priors::PriorTable;
use super::reporting::{DirichletPrior, ReportingModelSpec};
use crate::error::ModelError;
use crate::schema::{Level, Schema};

/// The seven measurement-error specifications of the education study plus
/// the conditional-independence imputer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Model1,
    Model2,
    Model3,
    Model4,
    Model5,
    Model6,
    Model7,
    Cia,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Model1,
        Preset::Model2,
        Preset::Model3,
        Preset::Model4,
        Preset::Model5,
        Preset::Model6,
        Preset::Model7,
        Preset::Cia,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Model1 => "model1",
            Preset::Model2 => "model2",
            Preset::Model3 => "model3",
            Preset::Model4 => "model4",
            Preset::Model5 => "model5",
            Preset::Model6 => "model6",
            Preset::Model7 => "model7",
            Preset::Cia => "cia",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| ModelError::ErrorSpec(format!("unknown preset `{s}` (model1..model7 or cia)")))
    }
}

/// How the presets find the covariates they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetOptions {
    pub sex_var: String,
    pub black_var: String,
    /// Level of `sex_var` meaning male; by default the level labelled
    /// `M`/`male`, else the first level.
    pub male_level: Option<String>,
    /// Level of `black_var` meaning yes; by default the level labelled
    /// `yes`, else the second level.
    pub black_yes_level: Option<String>,
    /// Error-rate priors for Models 5 and 6 beyond the male bachelor's group.
    pub error_priors: Option<PriorTable>,
    /// Reporting priors for Models 5 and 6 beyond the male bachelor's table.
    pub reporting_priors: Option<PriorTable>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            sex_var: "sex".into(),
            black_var: "black".into(),
            male_level: None,
            black_yes_level: None,
            error_priors: None,
            reporting_priors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub error: ErrorModelSpec,
    pub reporting: ReportingModelSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PresetModel {
    Cia,
    Measurement(MeasurementModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltPreset {
    pub preset: Preset,
    pub model: PresetModel,
    /// Prior entries that fell back to the flat default, and other notes.
    pub notes: Vec<String>,
}

impl BuiltPreset {
    pub fn measurement(&self) -> Option<&MeasurementModel> {
        match &self.model {
            PresetModel::Measurement(m) => Some(m),
            PresetModel::Cia => None,
        }
    }
}

pub const MODEL5_MALE_BA_ERROR: BetaPrior = BetaPrior { a: 0.76, b: 14.24 };
pub const MODEL6_MALE_BA_ERROR: BetaPrior = BetaPrior { a: 2724.2, b: 50862.0 };
pub const MODEL7_ERROR: BetaPrior = BetaPrior { a: 500.0, b: 99500.0 };
pub const MODEL5_MALE_BA_REPORTING: [f64; 3] = [3.54, 1.27, 0.19];
pub const MODEL6_MALE_BA_REPORTING: [f64; 3] = [2235.3, 799.7, 123.1];

struct Binary {
    name: String,
    on: Level,
    off: Level,
}

fn binary_var(schema: &Schema, name: &str, requested: Option<&str>, preferred: &[&str], fallback: usize) -> Result<Binary, ModelError> {
    let v = schema.covariate_index(name).expect("checked by caller");
    let cov = &schema.covariates[v];
    if cov.levels != 2 {
        return Err(ModelError::ErrorSpec(format!("preset covariate `{name}` must have 2 levels, has {}", cov.levels)));
    }
    let on = match requested {
        Some(text) => cov
            .parse_level(text)
            .ok_or_else(|| ModelError::ErrorSpec(format!("`{text}` is not a level of `{name}`")))?,
        None => cov
            .labels
            .as_ref()
            .and_then(|labels| labels.iter().position(|l| preferred.iter().any(|p| l.eq_ignore_ascii_case(p))))
            .map(Level::from_index)
            .unwrap_or(Level::from_index(fallback)),
    };
    Ok(Binary {
        name: name.to_string(),
        on,
        off: Level::from_index(1 - on.index()),
    })
}

/// Builds the error and reporting specs of `preset` for `schema`.
///
/// Models 1-3 use logistic error models with Normal(0, 10²) coefficient
/// priors and one reporting table per true level. Models 4-7 use one error
/// rate per sex × true level with Beta priors and reporting tables by sex.
pub fn build_preset(preset: Preset, schema: &Schema, opts: &PresetOptions) -> Result<BuiltPreset, ModelError> {
    let needs: &[&str] = match preset {
        Preset::Model1 | Preset::Cia => &[],
        Preset::Model3 => &[&opts.black_var],
        _ => &[&opts.sex_var],
    };
    let missing: Vec<String> = needs
        .iter()
        .filter(|n| schema.covariate_index(n).is_none())
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::IncompatibleSchema {
            preset: preset.to_string(),
            missing,
        });
    }
    let d_z = schema.reported_levels;
    let mut notes = Vec::new();
    let model = match preset {
        Preset::Cia => PresetModel::Cia,
        Preset::Model1 => {
            let mut terms = vec![DesignTerm::Intercept];
            terms.extend((1..d_z).map(DesignTerm::truth));
            logistic(terms, ReportingModelSpec::by_truth(vec![]))
        }
        Preset::Model2 => {
            let sex = binary_var(schema, &opts.sex_var, opts.male_level.as_deref(), &["m", "male"], 0)?;
            let mut terms = vec![DesignTerm::Intercept];
            terms.extend((1..d_z).map(|k| DesignTerm::interaction(k, &sex.name, sex.on)));
            logistic(terms, ReportingModelSpec::by_truth(vec![]))
        }
        Preset::Model3 => {
            let black = binary_var(schema, &opts.black_var, opts.black_yes_level.as_deref(), &["yes"], 1)?;
            let mut terms = vec![DesignTerm::Intercept];
            terms.extend((1..d_z).map(|k| DesignTerm::interaction(k, &black.name, black.off)));
            terms.extend((0..d_z).map(|k| DesignTerm::interaction(k, &black.name, black.on)));
            logistic(terms, ReportingModelSpec::by_truth(vec![]))
        }
        Preset::Model4 | Preset::Model5 | Preset::Model6 | Preset::Model7 => {
            let sex = binary_var(schema, &opts.sex_var, opts.male_level.as_deref(), &["m", "male"], 0)?;
            PresetModel::Measurement(by_sex(preset, schema, &sex, opts, &mut notes)?)
        }
    };
    for n in &notes {
        log::info!("{preset}: {n}");
    }
    Ok(BuiltPreset { preset, model, notes })
}

fn logistic(terms: Vec<DesignTerm>, reporting: ReportingModelSpec) -> PresetModel {
    let priors = vec![NormalPrior::FLAT; terms.len()];
    PresetModel::Measurement(MeasurementModel {
        error: ErrorModelSpec::general_logistic(terms, priors),
        reporting,
    })
}

/// Terms (male, BA) as intercept, then (male, k) for k ≥ 2 and (female, k)
/// for every reportable k.
fn by_sex(
    preset: Preset,
    schema: &Schema,
    sex: &Binary,
    opts: &PresetOptions,
    notes: &mut Vec<String>,
) -> Result<MeasurementModel, ModelError> {
    let d_z = schema.reported_levels;
    let mut keys = vec![(sex.on, 0)];
    let mut terms = vec![DesignTerm::Intercept];
    for k in 1..d_z {
        keys.push((sex.on, k));
        terms.push(DesignTerm::interaction(k, &sex.name, sex.on));
    }
    for k in 0..d_z {
        keys.push((sex.off, k));
        terms.push(DesignTerm::interaction(k, &sex.name, sex.off));
    }
    let table3 = matches!(preset, Preset::Model5 | Preset::Model6);
    if table3 && d_z != 4 {
        return Err(ModelError::ReportingSpec(format!(
            "{preset} carries published priors for 4 reported levels; the schema has {d_z}"
        )));
    }
    let sex_cov = &schema.covariates[schema.covariate_index(&sex.name).unwrap()];
    let group_label = |g: Level| sex_cov.label(g);
    let truth_label = |k: usize| schema.outcome_label(Level::from_index(k));

    let (male_ba_error, male_ba_reporting) = match preset {
        Preset::Model5 => (MODEL5_MALE_BA_ERROR, MODEL5_MALE_BA_REPORTING),
        Preset::Model6 => (MODEL6_MALE_BA_ERROR, MODEL6_MALE_BA_REPORTING),
        _ => (BetaPrior::FLAT, [1.0; 3]),
    };

    let error_priors: Vec<BetaPrior> = match preset {
        Preset::Model4 => vec![BetaPrior::FLAT; terms.len()],
        Preset::Model7 => vec![MODEL7_ERROR; terms.len()],
        _ => {
            let table = match &opts.error_priors {
                Some(t) => t.beta_priors(sex_cov, schema)?,
                None => Vec::new(),
            };
            keys.iter()
                .map(|&(g, k)| {
                    let listed = table.iter().find(|(tg, tk, _)| *tg == g && tk.index() == k).map(|e| e.2);
                    if (g, k) == (sex.on, 0) {
                        if listed.is_some_and(|p| p != male_ba_error) {
                            notes.push(format!(
                                "error prior for ({}, {}) from the table ignored; the published value is used",
                                group_label(g),
                                truth_label(k)
                            ));
                        }
                        male_ba_error
                    } else {
                        listed.unwrap_or_else(|| {
                            notes.push(format!(
                                "error prior for ({}, {}) defaulted to Beta(1, 1)",
                                group_label(g),
                                truth_label(k)
                            ));
                            BetaPrior::FLAT
                        })
                    }
                })
                .collect()
        }
    };
    // unlisted keys are rejected so a typo in a prior file cannot pass silently
    if let Some(t) = &opts.error_priors {
        if table3 {
            for (g, k, _) in t.beta_priors(sex_cov, schema)? {
                if !keys.contains(&(g, k.index())) {
                    return Err(ModelError::PriorTable(format!(
                        "error prior for ({}, {}) matches no error group",
                        group_label(g),
                        k
                    )));
                }
            }
        }
    }

    let mut reporting = ReportingModelSpec::by_truth(vec![sex.name.clone()]);
    if table3 {
        let table = match &opts.reporting_priors {
            Some(t) => t.dirichlet_priors(sex_cov, schema)?,
            None => Vec::new(),
        };
        for g in [sex.on, sex.off] {
            for k in 0..schema.true_levels {
                let listed = table.iter().find(|(tg, tk, _)| *tg == g && tk.index() == k).map(|e| e.2.clone());
                let alpha = if (g, k) == (sex.on, 0) {
                    if listed.as_deref().is_some_and(|a| a != male_ba_reporting) {
                        notes.push(format!(
                            "reporting prior for ({}, {}) from the table ignored; the published value is used",
                            group_label(g),
                            truth_label(k)
                        ));
                    }
                    male_ba_reporting.to_vec()
                } else {
                    match listed {
                        Some(a) => a,
                        None => {
                            notes.push(format!(
                                "reporting prior for ({}, {}) defaulted to Dirichlet(1, ..., 1)",
                                group_label(g),
                                truth_label(k)
                            ));
                            continue;
                        }
                    }
                };
                reporting.priors.push(DirichletPrior {
                    group: vec![g],
                    truth: Level::from_index(k),
                    alpha,
                });
            }
        }
    }
    Ok(MeasurementModel {
        error: ErrorModelSpec::group_saturated(terms, error_priors),
        reporting,
    })
}
