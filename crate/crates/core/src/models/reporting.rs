use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::schema::{Level, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportingKind {
    /// Every wrong report equally likely; nothing to estimate.
    Uniform,
    /// A free categorical p_{g,k}(·) per (reporting group, true level).
    CategoricalByTruth,
}

/// Dirichlet concentration for one (group, true level) table.
///
/// `alpha` runs over the table's support in increasing reported level: the
/// d_Z - 1 levels other than `truth` for reportable truths, all d_Z levels
/// otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    /// One level per stratifier covariate, in stratifier order.
    pub group: Vec<Level>,
    pub truth: Level,
    pub alpha: Vec<f64>,
}

fn default_alpha() -> f64 {
    1.0
}

fn is_default_alpha(a: &f64) -> bool {
    *a == 1.0
}

/// Pr(Z | E = 1, Y, X).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportingModelSpec {
    /// Covariates whose levels define the reporting groups; empty means a
    /// single group.
    #[serde(default)]
    pub stratifier: Vec<String>,
    pub kind: ReportingKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priors: Vec<DirichletPrior>,
    /// Concentration for every support point of tables not listed in `priors`.
    #[serde(default = "default_alpha", skip_serializing_if = "is_default_alpha")]
    pub default_alpha: f64,
}

impl ReportingModelSpec {
    pub fn uniform() -> Self {
        ReportingModelSpec {
            stratifier: Vec::new(),
            kind: ReportingKind::Uniform,
            priors: Vec::new(),
            default_alpha: 1.0,
        }
    }

    pub fn by_truth(stratifier: Vec<String>) -> Self {
        ReportingModelSpec {
            stratifier,
            kind: ReportingKind::CategoricalByTruth,
            priors: Vec::new(),
            default_alpha: 1.0,
        }
    }

    pub fn compile(&self, schema: &Schema) -> Result<CompiledReporting, ModelError> {
        let err = |m: String| ModelError::ReportingSpec(m);
        let vars = self
            .stratifier
            .iter()
            .map(|name| schema.covariate_index(name).ok_or_else(|| err(format!("unknown covariate `{name}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut seen = vars.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != vars.len() {
            return Err(err("stratifier lists a covariate twice".into()));
        }
        if !(self.default_alpha > 0.0) || !self.default_alpha.is_finite() {
            return Err(err(format!("default_alpha must be positive, got {}", self.default_alpha)));
        }
        if self.kind == ReportingKind::Uniform && !self.priors.is_empty() {
            return Err(err("uniform reporting takes no priors".into()));
        }
        let radix: Vec<usize> = vars.iter().map(|&v| schema.covariates[v].levels).collect();
        let n_groups = radix.iter().product::<usize>();
        let (d_y, d_z) = (schema.true_levels, schema.reported_levels);
        let group_of_cell = (0..schema.n_cells())
            .map(|c| {
                vars.iter()
                    .zip(&radix)
                    .fold(0, |acc, (&v, &r)| acc * r + schema.level_in_cell(c, v).index())
            })
            .collect();
        let mut alpha = vec![0.0; n_groups * d_y * d_z];
        for g in 0..n_groups {
            for k in 0..d_y {
                for l in 0..d_z {
                    if l != k {
                        alpha[(g * d_y + k) * d_z + l] = self.default_alpha;
                    }
                }
            }
        }
        let mut listed = vec![false; n_groups * d_y];
        for p in &self.priors {
            if p.group.len() != vars.len() {
                return Err(err(format!(
                    "prior group {:?} needs one level per stratifier covariate",
                    p.group
                )));
            }
            let mut g = 0;
            for (lev, &r) in p.group.iter().zip(&radix) {
                if lev.index() >= r {
                    return Err(err(format!("prior group {:?} out of range", p.group)));
                }
                g = g * r + lev.index();
            }
            let k = p.truth.index();
            if k >= d_y {
                return Err(err(format!("prior truth {} out of range", p.truth)));
            }
            let support: Vec<usize> = (0..d_z).filter(|&l| l != k).collect();
            if p.alpha.len() != support.len() {
                return Err(err(format!(
                    "prior for group {:?}, truth {} needs {} concentrations, got {}",
                    p.group,
                    p.truth,
                    support.len(),
                    p.alpha.len()
                )));
            }
            if p.alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
                return Err(err(format!("prior for group {:?}, truth {}: concentrations must be positive", p.group, p.truth)));
            }
            if std::mem::replace(&mut listed[g * d_y + k], true) {
                return Err(err(format!("duplicate prior for group {:?}, truth {}", p.group, p.truth)));
            }
            for (&l, &a) in support.iter().zip(&p.alpha) {
                alpha[(g * d_y + k) * d_z + l] = a;
            }
        }
        Ok(CompiledReporting {
            kind: self.kind,
            d_y,
            d_z,
            n_groups,
            group_of_cell,
            alpha,
        })
    }

    /// Free reporting probabilities: each table with m support points
    /// contributes m - 1.
    pub fn free_params(&self, schema: &Schema) -> Result<usize, ModelError> {
        Ok(self.compile(schema)?.free_params())
    }
}

/// Reporting spec resolved against a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledReporting {
    pub kind: ReportingKind,
    pub d_y: usize,
    pub d_z: usize,
    pub n_groups: usize,
    /// Reporting group of every cell.
    pub group_of_cell: Vec<usize>,
    /// Concentrations laid out like [`ReportingTables::probs`], 0 at
    /// structural zeros.
    pub alpha: Vec<f64>,
}

impl CompiledReporting {
    pub fn free_params(&self) -> usize {
        match self.kind {
            ReportingKind::Uniform => 0,
            ReportingKind::CategoricalByTruth => {
                let per_group: usize = (0..self.d_y).map(|k| self.support_len(k) - 1).sum();
                self.n_groups * per_group
            }
        }
    }

    pub fn support_len(&self, k: usize) -> usize {
        if k < self.d_z {
            self.d_z - 1
        } else {
            self.d_z
        }
    }

    #[inline]
    pub fn alpha_row(&self, g: usize, k: usize) -> &[f64] {
        let i = (g * self.d_y + k) * self.d_z;
        &self.alpha[i..i + self.d_z]
    }

    /// Eq.-style uniform tables: 1/(d_Z - 1) off the diagonal, 1/d_Z for
    /// unreportable truths.
    pub fn uniform_tables(&self) -> ReportingTables {
        let mut t = ReportingTables::zeros(self.n_groups, self.d_y, self.d_z);
        for g in 0..self.n_groups {
            for k in 0..self.d_y {
                let m = self.support_len(k) as f64;
                for (l, p) in t.row_mut(g, k).iter_mut().enumerate() {
                    if l != k {
                        *p = 1.0 / m;
                    }
                }
            }
        }
        t
    }

    /// Prior means α / Σα; the uniform tables for the uniform kind.
    pub fn prior_mean_tables(&self) -> ReportingTables {
        if self.kind == ReportingKind::Uniform {
            return self.uniform_tables();
        }
        let mut t = ReportingTables::zeros(self.n_groups, self.d_y, self.d_z);
        for g in 0..self.n_groups {
            for k in 0..self.d_y {
                let a = self.alpha_row(g, k);
                let s: f64 = a.iter().sum();
                for (p, &x) in t.row_mut(g, k).iter_mut().zip(a) {
                    *p = x / s;
                }
            }
        }
        t
    }
}

/// Current reporting probabilities, one length-d_Z row per (group, truth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportingTables {
    pub n_groups: usize,
    pub d_y: usize,
    pub d_z: usize,
    pub probs: Vec<f64>,
}

impl ReportingTables {
    pub fn zeros(n_groups: usize, d_y: usize, d_z: usize) -> Self {
        ReportingTables {
            n_groups,
            d_y,
            d_z,
            probs: vec![0.0; n_groups * d_y * d_z],
        }
    }

    #[inline]
    pub fn row(&self, g: usize, k: usize) -> &[f64] {
        let i = (g * self.d_y + k) * self.d_z;
        &self.probs[i..i + self.d_z]
    }

    #[inline]
    pub fn row_mut(&mut self, g: usize, k: usize) -> &mut [f64] {
        let i = (g * self.d_y + k) * self.d_z;
        &mut self.probs[i..i + self.d_z]
    }
}

/// Pr(Z = · | E = 1, Y = y, cell). Uniform specs ignore `tables`.
pub fn reporting_distribution(
    spec: &ReportingModelSpec,
    tables: &ReportingTables,
    schema: &Schema,
    cell: usize,
    y: Level,
) -> Result<Vec<f64>, ModelError> {
    let c = spec.compile(schema)?;
    if y.index() >= c.d_y || cell >= schema.n_cells() {
        return Err(ModelError::ReportingSpec(format!("cell {cell} / level {y} out of range")));
    }
    let g = c.group_of_cell[cell];
    Ok(match c.kind {
        ReportingKind::Uniform => c.uniform_tables().row(g, y.index()).to_vec(),
        ReportingKind::CategoricalByTruth => {
            if tables.n_groups != c.n_groups || tables.d_y != c.d_y || tables.d_z != c.d_z {
                return Err(ModelError::ReportingSpec("table dimensions do not match the spec".into()));
            }
            tables.row(g, y.index()).to_vec()
        }
    })
}
