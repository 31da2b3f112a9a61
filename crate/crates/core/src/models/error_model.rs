use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::random::logistic;
use crate::schema::{Level, Schema};

/// One column of the error-model design vector. Every term is a 0/1
/// indicator evaluated on (cell, true level).
///
/// JSON form, levels one-based:
///
/// ```json
/// {"term": "intercept"}
/// {"term": "truth", "level": 2}
/// {"term": "covariate", "variable": "sex", "level": 1}
/// {"term": "interaction", "truth": 2, "variable": "sex", "level": 1}
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "term", rename_all = "snake_case")]
pub enum DesignTerm {
    Intercept,
    Truth { level: Level },
    Covariate { variable: String, level: Level },
    Interaction { truth: Level, variable: String, level: Level },
}

impl DesignTerm {
    pub fn truth(k: usize) -> Self {
        DesignTerm::Truth { level: Level::from_index(k) }
    }

    pub fn interaction(k: usize, variable: &str, level: Level) -> Self {
        DesignTerm::Interaction {
            truth: Level::from_index(k),
            variable: variable.to_string(),
            level,
        }
    }

    fn resolve(&self, schema: &Schema) -> Result<ResolvedTerm, ModelError> {
        let var = |name: &str, level: Level| -> Result<(usize, Level), ModelError> {
            let v = schema
                .covariate_index(name)
                .ok_or_else(|| ModelError::ErrorSpec(format!("unknown covariate `{name}`")))?;
            if level.index() >= schema.covariates[v].levels {
                return Err(ModelError::ErrorSpec(format!("covariate `{name}` has no level {level}")));
            }
            Ok((v, level))
        };
        let truth = |k: Level| -> Result<Level, ModelError> {
            if k.index() >= schema.true_levels {
                return Err(ModelError::ErrorSpec(format!("true level {k} out of range")));
            }
            Ok(k)
        };
        Ok(match self {
            DesignTerm::Intercept => ResolvedTerm { truth: None, var: None },
            DesignTerm::Truth { level } => ResolvedTerm { truth: Some(truth(*level)?), var: None },
            DesignTerm::Covariate { variable, level } => ResolvedTerm { truth: None, var: Some(var(variable, *level)?) },
            DesignTerm::Interaction { truth: k, variable, level } => ResolvedTerm {
                truth: Some(truth(*k)?),
                var: Some(var(variable, *level)?),
            },
        })
    }
}

struct ResolvedTerm {
    truth: Option<Level>,
    var: Option<(usize, Level)>,
}

impl ResolvedTerm {
    fn active(&self, schema: &Schema, cell: usize, y: usize) -> bool {
        self.truth.map_or(true, |k| k.index() == y) && self.var.map_or(true, |(v, l)| schema.level_in_cell(cell, v) == l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub const FLAT: BetaPrior = BetaPrior { a: 1.0, b: 1.0 };

    pub fn new(a: f64, b: f64) -> Self {
        BetaPrior { a, b }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    fn check(&self) -> Result<(), String> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(format!("Beta({}, {}) needs finite positive parameters", self.a, self.b))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    /// Normal(0, 10²), the default "flat" coefficient prior.
    pub const FLAT: NormalPrior = NormalPrior { mean: 0.0, sd: 10.0 };

    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z
    }
}

/// How the error probability is parameterized and updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum ErrorEngine {
    /// One error rate per term. Each (cell, truth) pair belongs to the group
    /// of its single active non-intercept term, or to the intercept group
    /// when none is active. Parameters are the rates themselves.
    GroupSaturated { priors: Vec<BetaPrior> },
    /// logistic(Mᵀβ) with an independent Normal prior per coefficient.
    GeneralLogistic { priors: Vec<NormalPrior> },
}

/// g(X, Y, β): probability that the report differs from the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelSpec {
    pub terms: Vec<DesignTerm>,
    #[serde(flatten)]
    pub engine: ErrorEngine,
    /// True levels with Pr(E = 1) = 1. Levels that cannot be reported are
    /// always forced, listed here or not.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forced_error_levels: Vec<Level>,
}

impl ErrorModelSpec {
    pub fn group_saturated(terms: Vec<DesignTerm>, priors: Vec<BetaPrior>) -> Self {
        ErrorModelSpec {
            terms,
            engine: ErrorEngine::GroupSaturated { priors },
            forced_error_levels: Vec::new(),
        }
    }

    pub fn general_logistic(terms: Vec<DesignTerm>, priors: Vec<NormalPrior>) -> Self {
        ErrorModelSpec {
            terms,
            engine: ErrorEngine::GeneralLogistic { priors },
            forced_error_levels: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.terms.len()
    }

    pub fn is_group_saturated(&self) -> bool {
        matches!(self.engine, ErrorEngine::GroupSaturated { .. })
    }

    pub fn compile(&self, schema: &Schema) -> Result<CompiledErrorModel, ModelError> {
        if self.terms.is_empty() {
            return Err(ModelError::ErrorSpec("no design terms".into()));
        }
        let n_priors = match &self.engine {
            ErrorEngine::GroupSaturated { priors } => {
                for (j, p) in priors.iter().enumerate() {
                    p.check().map_err(|m| ModelError::ErrorSpec(format!("term {}: {m}", j + 1)))?;
                }
                priors.len()
            }
            ErrorEngine::GeneralLogistic { priors } => {
                for (j, p) in priors.iter().enumerate() {
                    if !(p.sd > 0.0) || !p.sd.is_finite() || !p.mean.is_finite() {
                        return Err(ModelError::ErrorSpec(format!("term {}: invalid Normal prior", j + 1)));
                    }
                }
                priors.len()
            }
        };
        if n_priors != self.terms.len() {
            return Err(ModelError::ErrorSpec(format!(
                "{} terms but {} priors",
                self.terms.len(),
                n_priors
            )));
        }
        for &k in &self.forced_error_levels {
            if k.index() >= schema.true_levels {
                return Err(ModelError::ErrorSpec(format!("forced level {k} out of range")));
            }
            if schema.is_reportable(k) {
                return Err(ModelError::ErrorSpec(format!(
                    "forced level {k} can be reported; only levels above {} may be forced",
                    schema.reported_levels
                )));
            }
        }
        let terms = self
            .terms
            .iter()
            .map(|t| t.resolve(schema))
            .collect::<Result<Vec<_>, _>>()?;
        let intercept = self.terms.iter().position(|t| *t == DesignTerm::Intercept);
        let d_y = schema.true_levels;
        let mut rows = Vec::with_capacity(schema.n_cells() * d_y);
        for cell in 0..schema.n_cells() {
            for y in 0..d_y {
                if !schema.is_reportable(Level::from_index(y)) {
                    rows.push(ErrorRow::Forced);
                    continue;
                }
                let active: Vec<usize> = terms
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.active(schema, cell, y))
                    .map(|(j, _)| j)
                    .collect();
                if self.is_group_saturated() {
                    let specific: Vec<usize> = active.iter().copied().filter(|&j| Some(j) != intercept).collect();
                    let group = match (specific.as_slice(), intercept) {
                        ([j], _) => *j,
                        ([], Some(i)) => i,
                        ([], None) => {
                            return Err(ModelError::ErrorSpec(format!(
                                "group-saturated terms leave cell {} with truth {} in no group",
                                schema.cell_label(cell),
                                y + 1
                            )))
                        }
                        _ => {
                            return Err(ModelError::ErrorSpec(format!(
                                "group-saturated terms overlap at cell {} with truth {}",
                                schema.cell_label(cell),
                                y + 1
                            )))
                        }
                    };
                    rows.push(ErrorRow::Group(group));
                } else {
                    rows.push(ErrorRow::Linear(active));
                }
            }
        }
        Ok(CompiledErrorModel {
            levels: d_y,
            n_params: self.terms.len(),
            rows,
        })
    }
}

/// Error model resolved against a schema: one row per (cell, true level).
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledErrorModel {
    levels: usize,
    n_params: usize,
    rows: Vec<ErrorRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ErrorRow {
    Forced,
    /// Index of the group rate.
    Group(usize),
    /// Coefficients summed into the linear predictor.
    Linear(Vec<usize>),
}

impl CompiledErrorModel {
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    #[inline]
    pub fn row(&self, cell: usize, y: usize) -> &ErrorRow {
        &self.rows[cell * self.levels + y]
    }

    #[inline]
    pub fn linear_predictor(&self, params: &[f64], cell: usize, y: usize) -> Option<f64> {
        match self.row(cell, y) {
            ErrorRow::Linear(idx) => Some(idx.iter().map(|&j| params[j]).sum()),
            _ => None,
        }
    }

    /// g(cell, y). `params` are group rates or logistic coefficients
    /// depending on the engine.
    #[inline]
    pub fn probability(&self, params: &[f64], cell: usize, y: usize) -> f64 {
        match self.row(cell, y) {
            ErrorRow::Forced => 1.0,
            ErrorRow::Group(g) => params[*g],
            ErrorRow::Linear(idx) => logistic(idx.iter().map(|&j| params[j]).sum()),
        }
    }
}

/// Probability that a record in `cell` with truth `y` misreports. Returns 1
/// for forced levels. For group-saturated specs `params` holds the group
/// error rates in term order.
pub fn error_probability(
    spec: &ErrorModelSpec,
    params: &[f64],
    schema: &Schema,
    cell: usize,
    y: Level,
) -> Result<f64, ModelError> {
    if params.len() != spec.n_params() {
        return Err(ModelError::ParamLength {
            expected: spec.n_params(),
            got: params.len(),
        });
    }
    if y.index() >= schema.true_levels || cell >= schema.n_cells() {
        return Err(ModelError::ErrorSpec(format!("cell {cell} / level {y} out of range")));
    }
    Ok(spec.compile(schema)?.probability(params, cell, y.index()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Covariate;

    fn nscg() -> Schema {
        Schema::new(
            vec![
                Covariate::with_labels("sex", &["M", "F"]),
                Covariate::new("age", 4),
                Covariate::with_labels("black", &["no", "yes"]),
            ],
            5,
            4,
        )
        .unwrap()
    }

    fn cell(schema: &Schema, sex: usize, age: usize, black: usize) -> usize {
        schema.encode(&[Level::from_index(sex), Level::from_index(age), Level::from_index(black)])
    }

    #[test]
    fn forced_level_has_probability_one() {
        let s = nscg();
        let spec = ErrorModelSpec::general_logistic(vec![DesignTerm::Intercept], vec![NormalPrior::FLAT]);
        assert_eq!(error_probability(&spec, &[-5.0], &s, 3, Level::from_index(4)).unwrap(), 1.0);
    }

    #[test]
    fn intercept_only_zero_is_half() {
        let s = nscg();
        let spec = ErrorModelSpec::general_logistic(vec![DesignTerm::Intercept], vec![NormalPrior::FLAT]);
        let m = spec.compile(&s).unwrap();
        for c in 0..s.n_cells() {
            for y in 0..4 {
                assert_eq!(m.probability(&[0.0], c, y), 0.5);
            }
        }
    }

    #[test]
    fn sex_interaction_linear_predictor() {
        let s = nscg();
        let male = Level::from_index(0);
        let mut terms = vec![DesignTerm::Intercept];
        terms.extend((1..4).map(|k| DesignTerm::interaction(k, "sex", male)));
        let spec = ErrorModelSpec::general_logistic(terms, vec![NormalPrior::FLAT; 4]);
        let beta = [-3.0, 1.0, 0.0, 0.0];
        let y2 = Level::from_index(1);
        let f = error_probability(&spec, &beta, &s, cell(&s, 1, 0, 0), y2).unwrap();
        let m = error_probability(&spec, &beta, &s, cell(&s, 0, 0, 0), y2).unwrap();
        // logistic(x) = 1 / (1 + e^-x) evaluated directly
        assert!((f - 1.0 / (1.0 + 3.0f64.exp())).abs() < 1e-15);
        assert!((f - 0.04743).abs() < 5e-6);
        assert!((m - 1.0 / (1.0 + 2.0f64.exp())).abs() < 1e-15);
        assert!((m - 0.11920).abs() < 5e-6);
    }

    #[test]
    fn parameter_length_mismatch() {
        let s = nscg();
        let spec = ErrorModelSpec::general_logistic(vec![DesignTerm::Intercept], vec![NormalPrior::FLAT]);
        assert!(matches!(
            error_probability(&spec, &[0.0, 1.0], &s, 0, Level::from_index(0)),
            Err(ModelError::ParamLength { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn group_saturated_constant_within_groups() {
        let s = nscg();
        let male = Level::from_index(0);
        let female = Level::from_index(1);
        let mut terms = vec![DesignTerm::Intercept];
        terms.extend((1..4).map(|k| DesignTerm::interaction(k, "sex", male)));
        terms.extend((0..4).map(|k| DesignTerm::interaction(k, "sex", female)));
        let spec = ErrorModelSpec::group_saturated(terms, vec![BetaPrior::FLAT; 8]);
        let m = spec.compile(&s).unwrap();
        let rates: Vec<f64> = (0..8).map(|j| 0.01 * (j + 1) as f64).collect();
        for c in 0..s.n_cells() {
            let sex = s.level_in_cell(c, 0).index();
            for y in 0..4 {
                let expected_group = match (sex, y) {
                    (0, 0) => 0,
                    (0, k) => k,
                    (_, k) => 4 + k,
                };
                assert_eq!(m.probability(&rates, c, y), rates[expected_group]);
            }
            assert_eq!(m.probability(&rates, c, 4), 1.0);
        }
    }

    #[test]
    fn overlapping_groups_are_rejected() {
        let s = nscg();
        let spec = ErrorModelSpec::group_saturated(
            vec![DesignTerm::truth(1), DesignTerm::Covariate { variable: "sex".into(), level: Level::from_index(0) }],
            vec![BetaPrior::FLAT; 2],
        );
        assert!(spec.compile(&s).is_err());
    }

    #[test]
    fn reportable_level_cannot_be_forced() {
        let s = nscg();
        let mut spec = ErrorModelSpec::general_logistic(vec![DesignTerm::Intercept], vec![NormalPrior::FLAT]);
        spec.forced_error_levels = vec![Level::from_index(4)];
        assert!(spec.compile(&s).is_ok());
        spec.forced_error_levels = vec![Level::from_index(2)];
        assert!(spec.compile(&s).is_err());
    }

    #[test]
    fn unknown_covariate_and_bad_priors() {
        let s = nscg();
        let spec = ErrorModelSpec::general_logistic(
            vec![DesignTerm::Covariate { variable: "race".into(), level: Level::from_index(0) }],
            vec![NormalPrior::FLAT],
        );
        assert!(spec.compile(&s).is_err());
        let spec = ErrorModelSpec::group_saturated(vec![DesignTerm::Intercept], vec![BetaPrior::new(0.0, 1.0)]);
        assert!(spec.compile(&s).is_err());
        let spec = ErrorModelSpec::group_saturated(vec![DesignTerm::Intercept], vec![]);
        assert!(spec.compile(&s).is_err());
    }

    #[test]
    fn term_json_grammar() {
        let t: DesignTerm = serde_json::from_str(r#"{"term":"interaction","truth":2,"variable":"sex","level":1}"#).unwrap();
        assert_eq!(t, DesignTerm::interaction(1, "sex", Level::from_index(0)));
        let spec = ErrorModelSpec::group_saturated(vec![DesignTerm::Intercept, DesignTerm::truth(1)], vec![BetaPrior::new(0.76, 14.24); 2]);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains(r#""engine":"group_saturated""#));
        assert_eq!(serde_json::from_str::<ErrorModelSpec>(&text).unwrap(), spec);
    }
}
