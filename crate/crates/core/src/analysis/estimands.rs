use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rubin::{rubin_combine, MIEstimate};
use crate::error::AnalysisError;
use crate::gibbs::ImputationSet;
use crate::schema::Schema;

/// Records selected by covariate labels, imputed and reported outcomes, and
/// extras values. An absent or empty list places no restriction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFilter {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub covariates: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub imputed: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reported: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, Vec<String>>,
}

impl DomainFilter {
    pub fn all() -> Self {
        DomainFilter::default()
    }

    pub fn covariate(mut self, name: &str, levels: &[&str]) -> Self {
        self.covariates.insert(name.into(), levels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn imputed(mut self, levels: &[&str]) -> Self {
        self.imputed = levels.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn reported(mut self, levels: &[&str]) -> Self {
        self.reported = levels.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn extra(mut self, name: &str, values: &[&str]) -> Self {
        self.extras.insert(name.into(), values.iter().map(|s| s.to_string()).collect());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimandKind {
    /// Σ w over the domain.
    DomainTotal,
    /// Ratio mean of `numeric_field` over the domain.
    DomainMean,
    /// Mean of `numeric_field` in subgroup `a` minus subgroup `b`, both
    /// intersected with the domain.
    SubgroupGap { a: DomainFilter, b: DomainFilter },
    /// Share of domain records whose imputed value differs from the report.
    ErrorRate,
    /// Share of domain records imputed at one of `levels`.
    CellShare { levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: EstimandKind,
    #[serde(default)]
    pub domain: DomainFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_field: Option<String>,
    #[serde(default = "yes")]
    pub weighted: bool,
}

fn yes() -> bool {
    true
}

impl EstimandSpec {
    pub fn new(name: impl Into<String>, kind: EstimandKind, domain: DomainFilter) -> Self {
        EstimandSpec {
            name: name.into(),
            kind,
            domain,
            numeric_field: None,
            weighted: true,
        }
    }

    pub fn numeric(mut self, field: impl Into<String>) -> Self {
        self.numeric_field = Some(field.into());
        self
    }

    pub fn unweighted(mut self) -> Self {
        self.weighted = false;
        self
    }

    fn needs_numeric(&self) -> bool {
        matches!(self.kind, EstimandKind::DomainMean | EstimandKind::SubgroupGap { .. })
    }
}

struct Filter {
    cells: Vec<bool>,
    imputed: Vec<bool>,
    reported: Vec<bool>,
    extras: Vec<(usize, Vec<String>)>,
}

impl Filter {
    #[inline]
    fn static_match(&self, set: &ImputationSet, i: usize) -> bool {
        let r = &set.data.records[i];
        self.cells[r.cell]
            && self.reported[r.z.index()]
            && self.extras.iter().all(|(j, vals)| vals.iter().any(|v| v == &r.extras[*j]))
    }
}

fn level_mask(
    spec: &str,
    levels: &[String],
    n: usize,
    parse: impl Fn(&str) -> Option<usize>,
) -> Result<Vec<bool>, AnalysisError> {
    if levels.is_empty() {
        return Ok(vec![true; n]);
    }
    let mut mask = vec![false; n];
    for l in levels {
        let k = parse(l).ok_or_else(|| AnalysisError::Estimand {
            name: spec.into(),
            reason: format!("unknown level `{l}`"),
        })?;
        mask[k] = true;
    }
    Ok(mask)
}

fn compile_filter(name: &str, f: &DomainFilter, set: &ImputationSet) -> Result<Filter, AnalysisError> {
    let s: &Schema = &set.schema;
    let mut cells = vec![true; s.n_cells()];
    for (var, levels) in &f.covariates {
        let j = s.covariate_index(var).ok_or_else(|| AnalysisError::Estimand {
            name: name.into(),
            reason: format!("unknown covariate `{var}`"),
        })?;
        let cov = &s.covariates[j];
        let mask = level_mask(name, levels, cov.levels, |t| cov.parse_level(t).map(|l| l.index()))?;
        for (c, keep) in cells.iter_mut().enumerate() {
            *keep &= mask[s.level_in_cell(c, j).index()];
        }
    }
    let imputed = level_mask(name, &f.imputed, s.true_levels, |t| s.parse_true_level(t).map(|l| l.index()))?;
    let reported = level_mask(name, &f.reported, s.reported_levels, |t| s.parse_reported_level(t).map(|l| l.index()))?;
    let mut extras = Vec::new();
    for (col, vals) in &f.extras {
        let j = set.data.extra_index(col).ok_or_else(|| AnalysisError::Estimand {
            name: name.into(),
            reason: format!("no extras column `{col}`"),
        })?;
        if !vals.is_empty() {
            extras.push((j, vals.clone()));
        }
    }
    Ok(Filter { cells, imputed, reported, extras })
}

enum Compiled {
    Total(Filter),
    Ratio { domain: Filter, value: Value },
    Gap { a: Filter, b: Filter, values: Vec<Option<f64>> },
}

enum Value {
    Numeric(Vec<Option<f64>>),
    Error,
    Levels(Vec<bool>),
}

/// An estimand resolved against one imputation set.
pub struct PreparedEstimand<'a> {
    spec: &'a EstimandSpec,
    set: &'a ImputationSet,
    compiled: Compiled,
    /// Records passing the covariate, report and extras parts of the domain.
    candidates: Vec<usize>,
}

fn numeric_column(spec: &EstimandSpec, set: &ImputationSet) -> Result<Vec<Option<f64>>, AnalysisError> {
    let field = spec.numeric_field.as_deref().expect("checked");
    let j = set.data.extra_index(field).ok_or_else(|| AnalysisError::Estimand {
        name: spec.name.clone(),
        reason: format!("no extras column `{field}`"),
    })?;
    set.data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = r.extras[j].trim();
            if t.is_empty() {
                return Ok(None);
            }
            t.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or_else(|| AnalysisError::Estimand {
                name: spec.name.clone(),
                reason: format!("record {}: `{t}` in `{field}` is not a number", i + 1),
            })
        })
        .collect()
}

impl<'a> PreparedEstimand<'a> {
    pub fn new(spec: &'a EstimandSpec, set: &'a ImputationSet) -> Result<Self, AnalysisError> {
        if spec.needs_numeric() != spec.numeric_field.is_some() {
            return Err(AnalysisError::Estimand {
                name: spec.name.clone(),
                reason: if spec.needs_numeric() {
                    "numeric_field is required for this kind".into()
                } else {
                    "numeric_field only applies to domain_mean and subgroup_gap".into()
                },
            });
        }
        let domain = compile_filter(&spec.name, &spec.domain, set)?;
        let candidates = (0..set.n()).filter(|&i| domain.static_match(set, i)).collect();
        let compiled = match &spec.kind {
            EstimandKind::DomainTotal => Compiled::Total(domain),
            EstimandKind::DomainMean => Compiled::Ratio { domain, value: Value::Numeric(numeric_column(spec, set)?) },
            EstimandKind::ErrorRate => Compiled::Ratio { domain, value: Value::Error },
            EstimandKind::CellShare { levels } => {
                if levels.is_empty() {
                    return Err(AnalysisError::Estimand { name: spec.name.clone(), reason: "cell_share needs levels".into() });
                }
                let s = &set.schema;
                let mask = level_mask(&spec.name, levels, s.true_levels, |t| s.parse_true_level(t).map(|l| l.index()))?;
                Compiled::Ratio { domain, value: Value::Levels(mask) }
            }
            EstimandKind::SubgroupGap { a, b } => {
                let mut fa = compile_filter(&spec.name, a, set)?;
                let mut fb = compile_filter(&spec.name, b, set)?;
                for f in [&mut fa, &mut fb] {
                    for (x, d) in f.cells.iter_mut().zip(&domain.cells) {
                        *x &= d;
                    }
                    for (x, d) in f.imputed.iter_mut().zip(&domain.imputed) {
                        *x &= d;
                    }
                    for (x, d) in f.reported.iter_mut().zip(&domain.reported) {
                        *x &= d;
                    }
                    f.extras.extend(domain.extras.iter().cloned());
                }
                Compiled::Gap { a: fa, b: fb, values: numeric_column(spec, set)? }
            }
        };
        Ok(PreparedEstimand { spec, set, compiled, candidates })
    }

    fn weight(&self, i: usize) -> f64 {
        if self.spec.weighted {
            self.set.data.records[i].weight
        } else {
            1.0
        }
    }

    /// `(q_m, u_m)` for imputation `m`, or `None` when the domain is empty.
    pub fn estimate(&self, m: usize) -> Option<(f64, f64)> {
        let ys = &self.set.imputed[m];
        let n = self.set.n() as f64;
        if n < 2.0 {
            return None;
        }
        let scale = n / (n - 1.0);
        match &self.compiled {
            Compiled::Total(f) => {
                let mut hits = 0usize;
                let (mut t, mut sq) = (0.0, 0.0);
                for &i in &self.candidates {
                    if f.imputed[ys[i].index()] {
                        let w = self.weight(i);
                        hits += 1;
                        t += w;
                        sq += w * w;
                    }
                }
                (hits > 0).then(|| (t, scale * (sq - t * t / n)))
            }
            Compiled::Ratio { domain, value } => {
                let v = |i: usize| -> Option<f64> {
                    match value {
                        Value::Numeric(col) => col[i],
                        Value::Error => Some(if self.set.e(m, i) { 1.0 } else { 0.0 }),
                        Value::Levels(mask) => Some(if mask[ys[i].index()] { 1.0 } else { 0.0 }),
                    }
                };
                let members: Vec<(f64, f64)> = self
                    .candidates
                    .iter()
                    .filter(|&&i| domain.imputed[ys[i].index()])
                    .filter_map(|&i| v(i).map(|x| (self.weight(i), x)))
                    .collect();
                ratio(&members, scale)
            }
            Compiled::Gap { a, b, values } => {
                let pick = |f: &Filter| -> Vec<(usize, f64, f64)> {
                    (0..self.set.n())
                        .filter(|&i| f.static_match(self.set, i) && f.imputed[ys[i].index()])
                        .filter_map(|i| values[i].map(|x| (i, self.weight(i), x)))
                        .collect()
                };
                let (ga, gb) = (pick(a), pick(b));
                let (wa, wb) = (ga.iter().map(|g| g.1).sum::<f64>(), gb.iter().map(|g| g.1).sum::<f64>());
                if !(wa > 0.0 && wb > 0.0) {
                    return None;
                }
                let ra = ga.iter().map(|g| g.1 * g.2).sum::<f64>() / wa;
                let rb = gb.iter().map(|g| g.1 * g.2).sum::<f64>() / wb;
                // linearized influence of each record on ra - rb
                let mut infl: BTreeMap<usize, f64> = BTreeMap::new();
                for &(i, w, x) in &ga {
                    *infl.entry(i).or_default() += w * (x - ra) / wa;
                }
                for &(i, w, x) in &gb {
                    *infl.entry(i).or_default() -= w * (x - rb) / wb;
                }
                let sum: f64 = infl.values().sum();
                let sq: f64 = infl.values().map(|z| z * z).sum();
                Some((ra - rb, scale * (sq - sum * sum / n)))
            }
        }
    }
}

/// Ratio mean Σ w x / Σ w with first-order linearized variance.
fn ratio(members: &[(f64, f64)], scale: f64) -> Option<(f64, f64)> {
    let w: f64 = members.iter().map(|m| m.0).sum();
    if !(w > 0.0) {
        return None;
    }
    let r = members.iter().map(|m| m.0 * m.1).sum::<f64>() / w;
    let sq: f64 = members.iter().map(|&(wi, x)| (wi * (x - r) / w).powi(2)).sum();
    Some((r, scale * sq))
}

/// Per-imputation estimate of `spec` on imputation `m`.
pub fn estimate_per_imputation(set: &ImputationSet, m: usize, spec: &EstimandSpec) -> Result<Option<(f64, f64)>, AnalysisError> {
    Ok(PreparedEstimand::new(spec, set)?.estimate(m))
}

/// MI estimate of one estimand. Imputations with an empty domain are left
/// out and reduce `m_used`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimandResult {
    pub name: String,
    pub estimate: Option<MIEstimate>,
    pub m_used: usize,
    pub m_total: usize,
    pub empty_imputations: Vec<usize>,
}

pub fn combine_estimand(set: &ImputationSet, spec: &EstimandSpec) -> Result<EstimandResult, AnalysisError> {
    let prepared = PreparedEstimand::new(spec, set)?;
    let per: Vec<Option<(f64, f64)>> = (0..set.m()).into_par_iter().map(|m| prepared.estimate(m)).collect();
    let used: Vec<(f64, f64)> = per.iter().flatten().copied().collect();
    let empty: Vec<usize> = per.iter().enumerate().filter(|(_, e)| e.is_none()).map(|(m, _)| m + 1).collect();
    if !empty.is_empty() {
        log::warn!("{}: empty domain in {} of {} imputations", spec.name, empty.len(), set.m());
    }
    let estimate = if used.len() >= 2 { Some(rubin_combine(&used)?) } else { None };
    Ok(EstimandResult {
        name: spec.name.clone(),
        estimate,
        m_used: used.len(),
        m_total: set.m(),
        empty_imputations: empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ErrorProneDataset, ErrorProneRecord};
    use crate::gibbs::{ImputationMethod, Provenance};
    use crate::schema::{Covariate, Level};
    use std::sync::Arc;

    fn set(rows: &[(usize, usize, f64, &str)], imputed: Vec<Vec<usize>>) -> ImputationSet {
        let schema = Schema::new(vec![Covariate::with_labels("sex", &["M", "F"])], 3, 2)
            .unwrap()
            .with_outcome_labels(&["BA", "MA", "None"])
            .unwrap();
        let records = rows
            .iter()
            .map(|&(c, z, w, v)| ErrorProneRecord { cell: c, z: Level::from_index(z), weight: w, extras: vec![v.into()] })
            .collect();
        ImputationSet {
            schema,
            data: Arc::new(ErrorProneDataset::new(vec!["salary".into()], records)),
            imputed: imputed.into_iter().map(|ys| ys.into_iter().map(Level::from_index).collect()).collect(),
            provenance: Provenance {
                method: ImputationMethod::Cia,
                label: "t".into(),
                seed: 0,
                config: None,
                model: None,
                digests: Default::default(),
            },
        }
    }

    #[test]
    fn mean_with_unit_weights_matches_hand_linearization() {
        let s = set(&[(0, 0, 1.0, "2"), (0, 0, 1.0, "4")], vec![vec![0, 0]]);
        let spec = EstimandSpec::new("m", EstimandKind::DomainMean, DomainFilter::all()).numeric("salary");
        // r = 3, z = (-1/2, 1/2), u = 2/1 * (1/4 + 1/4)
        assert_eq!(estimate_per_imputation(&s, 0, &spec).unwrap(), Some((3.0, 1.0)));
    }

    #[test]
    fn equal_weights_reduce_to_unweighted() {
        let rows = [(0, 0, 7.0, "1"), (1, 1, 7.0, "5"), (0, 1, 7.0, "6"), (1, 0, 7.0, "2")];
        let s = set(&rows, vec![vec![0, 1, 2, 0]]);
        let spec = EstimandSpec::new("m", EstimandKind::DomainMean, DomainFilter::all().imputed(&["BA", "MA"])).numeric("salary");
        let w = estimate_per_imputation(&s, 0, &spec).unwrap().unwrap();
        let u = estimate_per_imputation(&s, 0, &spec.clone().unweighted()).unwrap().unwrap();
        assert!((w.0 - u.0).abs() < 1e-15 && (w.1 - u.1).abs() < 1e-15);
        assert!((w.0 - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn total_uses_design_variance() {
        let rows = [(0, 0, 2.0, ""), (1, 1, 3.0, ""), (0, 1, 5.0, "")];
        let s = set(&rows, vec![vec![0, 2, 0]]);
        let spec = EstimandSpec::new("t", EstimandKind::DomainTotal, DomainFilter::all().imputed(&["BA"]));
        let (t, u) = estimate_per_imputation(&s, 0, &spec).unwrap().unwrap();
        assert_eq!(t, 7.0);
        // n/(n-1) (Σw² - T²/n) with n = 3
        assert!((u - 1.5 * (29.0 - 49.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn error_rate_and_cell_share() {
        let rows = [(0, 0, 1.0, ""), (0, 1, 1.0, ""), (1, 1, 2.0, ""), (1, 0, 1.0, "")];
        let s = set(&rows, vec![vec![0, 2, 0, 0]]);
        let er = EstimandSpec::new("e", EstimandKind::ErrorRate, DomainFilter::all());
        assert_eq!(estimate_per_imputation(&s, 0, &er).unwrap().unwrap().0, 3.0 / 5.0);
        let f = EstimandSpec::new("e", EstimandKind::ErrorRate, DomainFilter::all().covariate("sex", &["M"]));
        assert_eq!(estimate_per_imputation(&s, 0, &f).unwrap().unwrap().0, 0.5);
        let share = EstimandSpec::new("s", EstimandKind::CellShare { levels: vec!["BA".into()] }, DomainFilter::all().covariate("sex", &["F"]));
        assert_eq!(estimate_per_imputation(&s, 0, &share).unwrap().unwrap().0, 1.0);
    }

    #[test]
    fn gap_of_means() {
        let rows = [(0, 0, 1.0, "10"), (0, 0, 1.0, "20"), (1, 0, 1.0, "4"), (1, 0, 1.0, "")];
        let s = set(&rows, vec![vec![0, 0, 0, 0]]);
        let kind = EstimandKind::SubgroupGap {
            a: DomainFilter::all().covariate("sex", &["M"]),
            b: DomainFilter::all().covariate("sex", &["F"]),
        };
        let spec = EstimandSpec::new("g", kind, DomainFilter::all()).numeric("salary");
        let (q, u) = estimate_per_imputation(&s, 0, &spec).unwrap().unwrap();
        assert_eq!(q, 11.0);
        // influences: (-5/2, 5/2, 0, 0), n = 4
        assert!((u - 4.0 / 3.0 * 12.5).abs() < 1e-12);
    }

    #[test]
    fn empty_domain_reduces_m() {
        let s = set(&[(0, 0, 1.0, ""), (1, 1, 1.0, "")], vec![vec![0, 1], vec![2, 1], vec![2, 1], vec![0, 0]]);
        let spec = EstimandSpec::new("t", EstimandKind::ErrorRate, DomainFilter::all().imputed(&["BA"]));
        assert_eq!(estimate_per_imputation(&s, 1, &spec).unwrap(), None);
        let r = combine_estimand(&s, &spec).unwrap();
        assert_eq!((r.m_used, r.m_total, r.empty_imputations.clone()), (2, 4, vec![2, 3]));
        assert!(r.estimate.is_some());
    }

    #[test]
    fn validation() {
        let s = set(&[(0, 0, 1.0, "x"), (1, 1, 1.0, "")], vec![vec![0, 1]]);
        let no_field = EstimandSpec::new("m", EstimandKind::DomainMean, DomainFilter::all());
        assert!(estimate_per_imputation(&s, 0, &no_field).is_err());
        let extra_field = EstimandSpec::new("t", EstimandKind::DomainTotal, DomainFilter::all()).numeric("salary");
        assert!(estimate_per_imputation(&s, 0, &extra_field).is_err());
        let bad_number = EstimandSpec::new("m", EstimandKind::DomainMean, DomainFilter::all()).numeric("salary");
        assert!(estimate_per_imputation(&s, 0, &bad_number).is_err());
        let bad_level = EstimandSpec::new("t", EstimandKind::DomainTotal, DomainFilter::all().imputed(&["PhD"]));
        assert!(estimate_per_imputation(&s, 0, &bad_level).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = EstimandSpec::new("m", EstimandKind::CellShare { levels: vec!["BA".into()] }, DomainFilter::all().covariate("sex", &["F"]));
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"name":"m","kind":"cell_share","levels":["BA"],"domain":{"covariates":{"sex":["F"]}},"weighted":true}"#);
        let back: EstimandSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
