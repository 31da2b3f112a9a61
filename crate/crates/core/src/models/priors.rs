//! Prior tables read from CSV, keyed by a group level and a true level.
//!
//! Error-rate priors: `group,truth,a,b`. Reporting priors: `group,truth`
//! followed by one column per reported level; the entry at the structural
//! zero (reported level equal to the truth) must be blank or 0.
//!
//! Group and truth values are labels when the schema has them, one-based
//! level numbers otherwise.

use std::path::Path;

use crate::data::csv_error;
use crate::error::{DataError, Error, ModelError};
use crate::schema::{Covariate, Level, Schema};

use super::error_model::BetaPrior;

#[derive(Clone, Debug, PartialEq)]
pub struct PriorRow {
    pub line: usize,
    pub group: String,
    pub truth: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PriorTable {
    pub rows: Vec<PriorRow>,
}

impl PriorTable {
    pub fn read_csv(path: &Path) -> Result<Self, Error> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        Ok(Self::from_reader(file).map_err(|e| match e {
            Error::Model(ModelError::PriorTable(m)) => Error::Model(ModelError::PriorTable(format!("{}: {m}", path.display()))),
            Error::Data(DataError::Csv { source, .. }) => csv_error(path)(source).into(),
            other => other,
        })?)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, Error> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(csv_error(Path::new("<prior table>")))?.clone();
        if header.len() < 3 {
            return Err(ModelError::PriorTable("need group, truth and at least one value column".into()).into());
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error(Path::new("<prior table>")))?;
            let line = i + 2;
            if rec.len() != header.len() {
                return Err(ModelError::PriorTable(format!("line {line}: expected {} fields", header.len())).into());
            }
            let values = rec
                .iter()
                .skip(2)
                .map(|v| {
                    if v.is_empty() {
                        Ok(None)
                    } else {
                        v.parse::<f64>()
                            .map(Some)
                            .map_err(|_| ModelError::PriorTable(format!("line {line}: `{v}` is not a number")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(PriorRow {
                line,
                group: rec[0].to_string(),
                truth: rec[1].to_string(),
                values,
            });
        }
        Ok(PriorTable { rows })
    }

    fn key(&self, row: &PriorRow, group_var: &Covariate, schema: &Schema) -> Result<(Level, Level), ModelError> {
        let g = group_var.parse_level(&row.group).ok_or_else(|| {
            ModelError::PriorTable(format!("line {}: unknown {} level `{}`", row.line, group_var.name, row.group))
        })?;
        let k = schema
            .parse_true_level(&row.truth)
            .ok_or_else(|| ModelError::PriorTable(format!("line {}: unknown true level `{}`", row.line, row.truth)))?;
        Ok((g, k))
    }

    /// Reads rows as `a,b` Beta parameters.
    pub fn beta_priors(&self, group_var: &Covariate, schema: &Schema) -> Result<Vec<(Level, Level, BetaPrior)>, ModelError> {
        self.rows
            .iter()
            .map(|row| {
                let (g, k) = self.key(row, group_var, schema)?;
                match row.values.as_slice() {
                    [Some(a), Some(b)] if *a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite() => {
                        Ok((g, k, BetaPrior::new(*a, *b)))
                    }
                    _ => Err(ModelError::PriorTable(format!(
                        "line {}: error-rate prior needs two positive numbers a,b",
                        row.line
                    ))),
                }
            })
            .collect()
    }

    /// Reads rows as Dirichlet concentrations over the table's support.
    pub fn dirichlet_priors(&self, group_var: &Covariate, schema: &Schema) -> Result<Vec<(Level, Level, Vec<f64>)>, ModelError> {
        let d_z = schema.reported_levels;
        self.rows
            .iter()
            .map(|row| {
                let (g, k) = self.key(row, group_var, schema)?;
                if row.values.len() != d_z {
                    return Err(ModelError::PriorTable(format!(
                        "line {}: expected {d_z} reported-level columns, got {}",
                        row.line,
                        row.values.len()
                    )));
                }
                let mut alpha = Vec::with_capacity(d_z);
                for (l, v) in row.values.iter().enumerate() {
                    if l == k.index() {
                        if v.is_some_and(|x| x != 0.0) {
                            return Err(ModelError::PriorTable(format!(
                                "line {}: reported level {} equals the truth and must be blank or 0",
                                row.line,
                                l + 1
                            )));
                        }
                        continue;
                    }
                    match v {
                        Some(a) if *a > 0.0 && a.is_finite() => alpha.push(*a),
                        _ => {
                            return Err(ModelError::PriorTable(format!(
                                "line {}: concentration for reported level {} must be positive",
                                row.line,
                                l + 1
                            )))
                        }
                    }
                }
                Ok((g, k, alpha))
            })
            .collect()
    }
}
