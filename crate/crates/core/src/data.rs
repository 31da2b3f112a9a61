//! Weighted record collections for the two files and their CSV ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::schema::{Level, Schema};

/// Header column that marks a simulation truth ledger. Files carrying it are
/// refused by [`load_dataset`].
pub const LEDGER_MARKER: &str = "ledger_cell";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Gold,
    ErrorProne,
}

/// Binds schema variables to CSV columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    /// Schema covariate name to column name. Unlisted covariates are read
    /// from a column with the covariate's own name.
    #[serde(default)]
    pub covariates: BTreeMap<String, String>,
    /// Column holding Y (gold role) or Z (error-prone role).
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    /// Pass-through columns of the error-prone file.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extras: Vec<String>,
}

impl ColumnMap {
    pub fn new(outcome: impl Into<String>) -> Self {
        ColumnMap {
            outcome: outcome.into(),
            ..Default::default()
        }
    }

    pub fn weight(mut self, column: impl Into<String>) -> Self {
        self.weight = Some(column.into());
        self
    }

    pub fn extras<I: IntoIterator<Item = S>, S: Into<String>>(mut self, cols: I) -> Self {
        self.extras = cols.into_iter().map(Into::into).collect();
        self
    }

    pub fn covariate_column<'a>(&'a self, name: &'a str) -> &'a str {
        self.covariates.get(name).map(String::as_str).unwrap_or(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoldRecord {
    pub cell: usize,
    pub y: Level,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldDataset {
    pub records: Vec<GoldRecord>,
}

impl GoldDataset {
    pub fn new(records: Vec<GoldRecord>) -> Self {
        GoldDataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts_by_cell(&self, schema: &Schema) -> Vec<usize> {
        let mut counts = vec![0; schema.n_cells()];
        for r in &self.records {
            counts[r.cell] += 1;
        }
        counts
    }

    /// Cells without a single gold record. Allowed, but flagged.
    pub fn empty_cells(&self, schema: &Schema) -> Vec<usize> {
        self.counts_by_cell(schema)
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorProneRecord {
    pub cell: usize,
    pub z: Level,
    pub weight: f64,
    /// Values of the pass-through columns, in `ErrorProneDataset::extras_names` order.
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorProneDataset {
    pub extras_names: Vec<String>,
    pub records: Vec<ErrorProneRecord>,
}

impl ErrorProneDataset {
    pub fn new(extras_names: Vec<String>, records: Vec<ErrorProneRecord>) -> Self {
        ErrorProneDataset { extras_names, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extra_index(&self, name: &str) -> Option<usize> {
        self.extras_names.iter().position(|n| n == name)
    }

    pub fn cells_present(&self, schema: &Schema) -> Vec<bool> {
        let mut present = vec![false; schema.n_cells()];
        for r in &self.records {
            present[r.cell] = true;
        }
        present
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Gold(GoldDataset),
    ErrorProne(ErrorProneDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Gold(d) => d.len(),
            Dataset::ErrorProne(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads and validates a CSV file for either role. Levels are mapped to
/// schema levels; weights default to 1 when no weight column is bound.
pub fn load_dataset(path: &Path, role: DatasetRole, schema: &Schema, columns: &ColumnMap) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, path, role, schema, columns)
}

pub fn load_gold(path: &Path, schema: &Schema, columns: &ColumnMap) -> Result<GoldDataset, DataError> {
    match load_dataset(path, DatasetRole::Gold, schema, columns)? {
        Dataset::Gold(d) => Ok(d),
        Dataset::ErrorProne(_) => unreachable!(),
    }
}

pub fn load_error_prone(path: &Path, schema: &Schema, columns: &ColumnMap) -> Result<ErrorProneDataset, DataError> {
    match load_dataset(path, DatasetRole::ErrorProne, schema, columns)? {
        Dataset::ErrorProne(d) => Ok(d),
        Dataset::Gold(_) => unreachable!(),
    }
}

/// Like [`load_dataset`] but from any reader; `path` is only used in messages.
pub fn read_dataset<R: std::io::Read>(
    reader: R,
    path: &Path,
    role: DatasetRole,
    schema: &Schema,
    columns: &ColumnMap,
) -> Result<Dataset, DataError> {
    schema.validate()?;
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().any(|h| h == LEDGER_MARKER) {
        return Err(DataError::LedgerRefused { path: path.to_path_buf() });
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    if role == DatasetRole::Gold && !columns.extras.is_empty() {
        return Err(DataError::Invalid("extras columns are only carried by the error-prone file".into()));
    }

    let cov_cols: Vec<(usize, &str)> = schema
        .covariates
        .iter()
        .map(|c| {
            let col = columns.covariate_column(&c.name);
            find(col).map(|i| (i, col))
        })
        .collect::<Result<_, _>>()?;
    let outcome_col = find(&columns.outcome)?;
    let weight_col = columns.weight.as_deref().map(|w| find(w).map(|i| (i, w))).transpose()?;
    let extra_cols: Vec<usize> = columns.extras.iter().map(|e| find(e)).collect::<Result<_, _>>()?;

    let mut gold = Vec::new();
    let mut prone = Vec::new();
    let mut levels = vec![Level::default(); schema.covariates.len()];
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let row_no = i + 1;
        let field = |idx: usize, col: &str| -> Result<&str, DataError> {
            match row.get(idx).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DataError::MissingValue {
                    path: path.to_path_buf(),
                    row: row_no,
                    column: col.to_string(),
                }),
            }
        };
        let unknown = |col: &str, value: &str| DataError::UnknownLevel {
            path: path.to_path_buf(),
            row: row_no,
            column: col.to_string(),
            value: value.to_string(),
        };
        for ((slot, cov), &(idx, col)) in levels.iter_mut().zip(&schema.covariates).zip(&cov_cols) {
            let v = field(idx, col)?;
            *slot = cov.parse_level(v).ok_or_else(|| unknown(col, v))?;
        }
        let cell = schema.encode(&levels);
        let weight = match weight_col {
            None => 1.0,
            Some((idx, col)) => {
                let v = field(idx, col)?;
                match v.parse::<f64>() {
                    Ok(w) if w.is_finite() && w > 0.0 => w,
                    _ => {
                        return Err(DataError::BadWeight {
                            path: path.to_path_buf(),
                            row: row_no,
                            column: col.to_string(),
                            value: v.to_string(),
                        })
                    }
                }
            }
        };
        let ov = field(outcome_col, &columns.outcome)?;
        match role {
            DatasetRole::Gold => {
                let y = schema.parse_true_level(ov).ok_or_else(|| unknown(&columns.outcome, ov))?;
                gold.push(GoldRecord { cell, y, weight });
            }
            DatasetRole::ErrorProne => {
                let z = schema
                    .parse_reported_level(ov)
                    .ok_or_else(|| unknown(&columns.outcome, ov))?;
                let extras = extra_cols
                    .iter()
                    .map(|&idx| row.get(idx).unwrap_or("").to_string())
                    .collect();
                prone.push(ErrorProneRecord { cell, z, weight, extras });
            }
        }
    }
    let out = match role {
        DatasetRole::Gold => Dataset::Gold(GoldDataset::new(gold)),
        DatasetRole::ErrorProne => Dataset::ErrorProne(ErrorProneDataset::new(columns.extras.clone(), prone)),
    };
    log::info!("{}: loaded {} records", path.display(), out.len());
    Ok(out)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<File>>, DataError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

pub(crate) fn finish_csv<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<(), DataError> {
    w.flush().map_err(io_err(path))
}

pub(crate) fn csv_error(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a gold file readable by [`load_dataset`] with
/// `ColumnMap::new(outcome).weight("weight")`.
pub fn write_gold(path: &Path, schema: &Schema, data: &GoldDataset, outcome: &str) -> Result<(), DataError> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = schema.covariates.iter().map(|c| c.name.as_str()).collect();
    header.push(outcome);
    header.push("weight");
    w.write_record(&header).map_err(csv_error(path))?;
    for r in &data.records {
        let mut row = covariate_fields(schema, r.cell);
        row.push(schema.outcome_label(r.y));
        row.push(format_float(r.weight));
        w.write_record(&row).map_err(csv_error(path))?;
    }
    finish_csv(path, w)
}

/// Writes an error-prone file: covariates, reported outcome, `weight`, then extras.
pub fn write_error_prone(path: &Path, schema: &Schema, data: &ErrorProneDataset, outcome: &str) -> Result<(), DataError> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = schema.covariates.iter().map(|c| c.name.as_str()).collect();
    header.push(outcome);
    header.push("weight");
    header.extend(data.extras_names.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_error(path))?;
    for r in &data.records {
        let mut row = covariate_fields(schema, r.cell);
        row.push(schema.outcome_label(r.z));
        row.push(format_float(r.weight));
        row.extend(r.extras.iter().cloned());
        w.write_record(&row).map_err(csv_error(path))?;
    }
    finish_csv(path, w)
}

pub(crate) fn covariate_fields(schema: &Schema, cell: usize) -> Vec<String> {
    let idx = schema.decode(cell);
    idx.levels
        .iter()
        .zip(&schema.covariates)
        .map(|(l, c)| c.label(*l))
        .collect()
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Covariate;
    use std::io::Cursor;

    fn schema() -> Schema {
        Schema::new(
            vec![Covariate::with_labels("sex", &["M", "F"]), Covariate::new("age", 2)],
            3,
            2,
        )
        .unwrap()
        .with_outcome_labels(&["BA", "MA", "None"])
        .unwrap()
    }

    fn read(text: &str, role: DatasetRole, cols: &ColumnMap) -> Result<Dataset, DataError> {
        read_dataset(Cursor::new(text.as_bytes().to_vec()), Path::new("t.csv"), role, &schema(), cols)
    }

    #[test]
    fn loads_four_gold_rows() {
        let text = "sex,age,educ,w\nM,1,BA,2\nF,2,MA,1.5\nF,1,None,3\nM,2,BA,1\n";
        let ds = read(text, DatasetRole::Gold, &ColumnMap::new("educ").weight("w")).unwrap();
        let Dataset::Gold(g) = ds else { panic!() };
        assert_eq!(g.len(), 4);
        assert_eq!(g.records[1].cell, 3);
        assert_eq!(g.records[2].y, Level::from_index(2));
        assert_eq!(g.records[1].weight, 1.5);
    }

    #[test]
    fn unknown_label_names_row_and_column() {
        let text = "sex,age,educ\nM,1,BA\nF,2,MA\nF,1,Assoc\n";
        let err = read(text, DatasetRole::Gold, &ColumnMap::new("educ")).unwrap_err();
        match err {
            DataError::UnknownLevel { row, column, value, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "educ");
                assert_eq!(value, "Assoc");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unreportable_level_rejected_in_error_prone_file() {
        let text = "sex,age,z\nM,1,None\n";
        assert!(matches!(
            read(text, DatasetRole::ErrorProne, &ColumnMap::new("z")),
            Err(DataError::UnknownLevel { .. })
        ));
    }

    #[test]
    fn missing_weight_column_rejected() {
        let text = "sex,age,educ\nM,1,BA\n";
        let err = read(text, DatasetRole::Gold, &ColumnMap::new("educ").weight("w")).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { ref column, .. } if column == "w"));
    }

    #[test]
    fn non_positive_weight_rejected() {
        for bad in ["0", "-1", "abc", "NaN"] {
            let text = format!("sex,age,educ,w\nM,1,BA,{bad}\n");
            let err = read(&text, DatasetRole::Gold, &ColumnMap::new("educ").weight("w")).unwrap_err();
            assert!(matches!(err, DataError::BadWeight { row: 1, .. }), "{bad}");
        }
    }

    #[test]
    fn missing_values_rejected() {
        let text = "sex,age,educ\nM,,BA\n";
        assert!(matches!(
            read(text, DatasetRole::Gold, &ColumnMap::new("educ")),
            Err(DataError::MissingValue { row: 1, .. })
        ));
    }

    #[test]
    fn weights_default_to_one() {
        let text = "sex,age,educ\nM,1,BA\n";
        let Dataset::Gold(g) = read(text, DatasetRole::Gold, &ColumnMap::new("educ")).unwrap() else {
            panic!()
        };
        assert_eq!(g.records[0].weight, 1.0);
    }

    #[test]
    fn column_bindings_and_extras() {
        let text = "gender,age,z,inc\nF,2,MA,51000\n";
        let mut cols = ColumnMap::new("z").extras(["inc"]);
        cols.covariates.insert("sex".into(), "gender".into());
        let Dataset::ErrorProne(e) = read(text, DatasetRole::ErrorProne, &cols).unwrap() else {
            panic!()
        };
        assert_eq!(e.records[0].cell, 3);
        assert_eq!(e.records[0].extras, vec!["51000".to_string()]);
        assert_eq!(e.extra_index("inc"), Some(0));
    }

    #[test]
    fn ledger_files_are_refused() {
        let text = "ledger_cell,y,z,count\n0,1,1,5\n";
        assert!(matches!(
            read(text, DatasetRole::Gold, &ColumnMap::new("y")),
            Err(DataError::LedgerRefused { .. })
        ));
    }

    #[test]
    fn per_cell_counts_sum_to_n() {
        let text = "sex,age,educ\nM,1,BA\nM,1,MA\nF,2,BA\n";
        let Dataset::Gold(g) = read(text, DatasetRole::Gold, &ColumnMap::new("educ")).unwrap() else {
            panic!()
        };
        let counts = g.counts_by_cell(&schema());
        assert_eq!(counts.iter().sum::<usize>(), g.len());
        assert_eq!(g.empty_cells(&schema()), vec![1, 2]);
    }

    #[test]
    fn write_then_load_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let s = schema();
        let ep = ErrorProneDataset::new(
            vec!["inc".into()],
            vec![
                ErrorProneRecord { cell: 0, z: Level::from_index(1), weight: 2.5, extras: vec!["10".into()] },
                ErrorProneRecord { cell: 3, z: Level::from_index(0), weight: 0.1, extras: vec!["x,y".into()] },
            ],
        );
        let p = dir.path().join("ep.csv");
        write_error_prone(&p, &s, &ep, "z").unwrap();
        let back = load_error_prone(&p, &s, &ColumnMap::new("z").weight("weight").extras(["inc"])).unwrap();
        assert_eq!(back, ep);
    }
}
