use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::GibbsConfig;
use crate::data::{covariate_fields, csv_error, csv_writer, finish_csv, format_float, read_dataset, ColumnMap, Dataset, DatasetRole, ErrorProneDataset};
use crate::digest::sha256_file;
use crate::error::{DataError, Error};
use crate::models::MeasurementModel;
use crate::schema::{Level, Schema};

pub const REPORTED_COLUMN: &str = "reported";
pub const IMPUTED_COLUMN: &str = "imputed";
pub const WEIGHT_COLUMN: &str = "weight";
pub const INDEX_FILE: &str = "imputations.json";
pub const LONG_FILE: &str = "imputations_long.csv";
const FORMAT: &str = "mefuse-imputations-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMethod {
    Gibbs,
    Cia,
}

/// Where a set of imputations came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: ImputationMethod,
    /// Free-form model name, e.g. the preset.
    pub label: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GibbsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<MeasurementModel>,
    /// Named digests of the inputs (specs, posterior, prior files).
    #[serde(default)]
    pub digests: BTreeMap<String, String>,
}

/// M completed copies of the error-prone file. Records, weights, reports
/// and extras are shared; only the imputed true values differ.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationSet {
    pub schema: Schema,
    pub data: Arc<ErrorProneDataset>,
    /// `imputed[m][i]` is the true value of record `i` in imputation `m`.
    pub imputed: Vec<Vec<Level>>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    schema: Schema,
    extras: Vec<String>,
    records: usize,
    imputations: usize,
    provenance: Provenance,
    files: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

impl ImputationSet {
    pub fn m(&self) -> usize {
        self.imputed.len()
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// Error indicator: the imputed truth differs from the report.
    #[inline]
    pub fn e(&self, m: usize, i: usize) -> bool {
        self.imputed[m][i] != self.data.records[i].z
    }

    pub fn file_name(m: usize) -> String {
        format!("imputation_{:03}.csv", m + 1)
    }

    /// Writes one CSV per imputation plus [`INDEX_FILE`]; with `long` also a
    /// single `record,imputation,imputed` file. Returns the paths written.
    pub fn write_dir(&self, dir: &Path, long: bool) -> Result<Vec<PathBuf>, Error> {
        for name in &self.data.extras_names {
            if [REPORTED_COLUMN, IMPUTED_COLUMN, WEIGHT_COLUMN].contains(&name.as_str())
                || self.schema.covariate_index(name).is_some()
            {
                return Err(DataError::Invalid(format!("extras column `{name}` clashes with an output column")).into());
            }
        }
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
        let mut header: Vec<String> = self.schema.covariates.iter().map(|c| c.name.clone()).collect();
        header.extend([REPORTED_COLUMN, IMPUTED_COLUMN, WEIGHT_COLUMN].map(String::from));
        header.extend(self.data.extras_names.iter().cloned());
        let fixed: Vec<Vec<String>> = self
            .data
            .records
            .iter()
            .map(|r| {
                let mut row = covariate_fields(&self.schema, r.cell);
                row.push(self.schema.outcome_label(r.z));
                row
            })
            .collect();
        let mut written = Vec::new();
        let mut entries = Vec::new();
        for (m, ys) in self.imputed.iter().enumerate() {
            let name = Self::file_name(m);
            let path = dir.join(&name);
            let mut w = csv_writer(&path)?;
            w.write_record(&header).map_err(csv_error(&path))?;
            for ((r, pre), y) in self.data.records.iter().zip(&fixed).zip(ys) {
                let mut row = pre.clone();
                row.push(self.schema.outcome_label(*y));
                row.push(format_float(r.weight));
                row.extend(r.extras.iter().cloned());
                w.write_record(&row).map_err(csv_error(&path))?;
            }
            finish_csv(&path, w)?;
            entries.push(FileEntry { name, sha256: sha256_file(&path)? });
            written.push(path);
        }
        if long {
            let path = dir.join(LONG_FILE);
            let mut w = csv_writer(&path)?;
            w.write_record(["record", "imputation", IMPUTED_COLUMN]).map_err(csv_error(&path))?;
            for (m, ys) in self.imputed.iter().enumerate() {
                for (i, y) in ys.iter().enumerate() {
                    w.write_record([(i + 1).to_string(), (m + 1).to_string(), self.schema.outcome_label(*y)])
                        .map_err(csv_error(&path))?;
                }
            }
            finish_csv(&path, w)?;
            entries.push(FileEntry {
                name: LONG_FILE.to_string(),
                sha256: sha256_file(&path)?,
            });
            written.push(path);
        }
        let index = IndexFile {
            format: FORMAT.to_string(),
            schema: self.schema.clone(),
            extras: self.data.extras_names.clone(),
            records: self.n(),
            imputations: self.m(),
            provenance: self.provenance.clone(),
            files: entries,
        };
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|source| DataError::Json { path: path.clone(), source })?;
        std::fs::write(&path, text + "\n").map_err(|source| DataError::Io { path: path.clone(), source })?;
        written.push(path);
        Ok(written)
    }

    /// Reads a directory written by [`ImputationSet::write_dir`], checking
    /// file digests.
    pub fn read_dir(dir: &Path) -> Result<Self, Error> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Err(DataError::Invalid(format!(
                "{}: no {INDEX_FILE}; not an imputation directory",
                dir.display()
            ))
            .into());
        }
        let text = std::fs::read_to_string(&index_path).map_err(|source| DataError::Io { path: index_path.clone(), source })?;
        let index: IndexFile =
            serde_json::from_str(&text).map_err(|source| DataError::Json { path: index_path.clone(), source })?;
        if index.format != FORMAT {
            return Err(DataError::Invalid(format!("{}: unknown format `{}`", index_path.display(), index.format)).into());
        }
        for f in &index.files {
            let got = sha256_file(&dir.join(&f.name))?;
            if got != f.sha256 {
                return Err(DataError::Invalid(format!("{}: digest mismatch for {}", index_path.display(), f.name)).into());
            }
        }
        let schema = index.schema;
        let reported = ColumnMap::new(REPORTED_COLUMN).weight(WEIGHT_COLUMN).extras(index.extras.clone());
        let imputed_cols = ColumnMap::new(IMPUTED_COLUMN);
        let mut data = None;
        let mut imputed = Vec::with_capacity(index.imputations);
        for m in 0..index.imputations {
            let path = dir.join(Self::file_name(m));
            let bytes = std::fs::read(&path).map_err(|source| DataError::Io { path: path.clone(), source })?;
            if m == 0 {
                match read_dataset(bytes.as_slice(), &path, DatasetRole::ErrorProne, &schema, &reported)? {
                    Dataset::ErrorProne(d) => data = Some(d),
                    Dataset::Gold(_) => unreachable!(),
                }
            }
            // the imputed column holds true levels, which may be unreportable
            let ys = match read_dataset(bytes.as_slice(), &path, DatasetRole::Gold, &schema, &imputed_cols)? {
                Dataset::Gold(g) => g.records.into_iter().map(|r| r.y).collect::<Vec<_>>(),
                Dataset::ErrorProne(_) => unreachable!(),
            };
            if ys.len() != index.records {
                return Err(DataError::Invalid(format!("{}: expected {} records", path.display(), index.records)).into());
            }
            imputed.push(ys);
        }
        let data = data.unwrap_or_default();
        if data.len() != index.records {
            return Err(DataError::Invalid(format!("{}: record count mismatch", dir.display())).into());
        }
        Ok(ImputationSet {
            schema,
            data: Arc::new(data),
            imputed,
            provenance: index.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ErrorProneRecord;
    use crate::schema::Covariate;

    pub(crate) fn small_set() -> ImputationSet {
        let schema = Schema::new(vec![Covariate::with_labels("sex", &["M", "F"])], 3, 2)
            .unwrap()
            .with_outcome_labels(&["BA", "MA", "None"])
            .unwrap();
        let records = vec![
            ErrorProneRecord { cell: 0, z: Level::from_index(0), weight: 1.5, extras: vec!["10".into()] },
            ErrorProneRecord { cell: 1, z: Level::from_index(1), weight: 2.0, extras: vec!["".into()] },
        ];
        ImputationSet {
            schema,
            data: Arc::new(ErrorProneDataset::new(vec!["income".into()], records)),
            imputed: vec![
                vec![Level::from_index(0), Level::from_index(2)],
                vec![Level::from_index(1), Level::from_index(1)],
            ],
            provenance: Provenance {
                method: ImputationMethod::Cia,
                label: "cia".into(),
                seed: 3,
                config: None,
                model: None,
                digests: BTreeMap::new(),
            },
        }
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = small_set();
        let written = set.write_dir(dir.path(), true).unwrap();
        assert_eq!(written.len(), 4);
        let back = ImputationSet::read_dir(dir.path()).unwrap();
        assert_eq!(back, set);
        let first = std::fs::read_to_string(dir.path().join("imputation_001.csv")).unwrap();
        assert_eq!(first, "sex,reported,imputed,weight,income\nM,BA,BA,1.5,10\nF,MA,None,2.0,\n");
        assert!(set.e(0, 1) && !set.e(0, 0));
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        small_set().write_dir(dir.path(), false).unwrap();
        std::fs::write(dir.path().join("imputation_002.csv"), "x").unwrap();
        assert!(ImputationSet::read_dir(dir.path()).is_err());
    }

    #[test]
    fn missing_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ImputationSet::read_dir(dir.path()).is_err());
    }
}
