//! Harmonized variable declarations shared by the gold-standard and
//! error-prone files, and the dense enumeration of covariate cells.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::DataError;

/// A categorical level, stored zero-based.
///
/// Levels serialize one-based (the first level of a variable is `1`), which
/// is how they appear in spec documents and unlabelled CSV files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Level(u16);

impl Level {
    pub const MAX_LEVELS: usize = u16::MAX as usize;

    pub fn from_index(index: usize) -> Self {
        debug_assert!(index < Self::MAX_LEVELS);
        Level(index as u16)
    }

    /// `None` for zero or values past [`Level::MAX_LEVELS`].
    pub fn from_one_based(n: usize) -> Option<Self> {
        if n == 0 || n > Self::MAX_LEVELS {
            None
        } else {
            Some(Level((n - 1) as u16))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn one_based(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.one_based())
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.one_based() as u64)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = u64::deserialize(d)?;
        Level::from_one_based(n as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("level {n} out of range (levels are 1-based)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Covariate {
    pub fn new(name: impl Into<String>, levels: usize) -> Self {
        Covariate {
            name: name.into(),
            levels,
            labels: None,
        }
    }

    pub fn with_labels(name: impl Into<String>, labels: &[&str]) -> Self {
        Covariate {
            name: name.into(),
            levels: labels.len(),
            labels: Some(labels.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn label(&self, level: Level) -> String {
        level_text(self.labels.as_deref(), level)
    }

    pub fn parse_level(&self, text: &str) -> Option<Level> {
        parse_level_text(self.labels.as_deref(), self.levels, text)
    }
}

/// Declaration of the common covariates X, the true outcome Y and the
/// reported outcome Z.
///
/// Reported level `l` is identified with true level `l`; true levels past
/// `reported_levels` cannot be reported and always count as errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub covariates: Vec<Covariate>,
    pub true_levels: usize,
    pub reported_levels: usize,
    /// Labels for the true levels; the first `reported_levels` double as
    /// labels for the reported levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_labels: Option<Vec<String>>,
}

impl Schema {
    pub fn new(covariates: Vec<Covariate>, true_levels: usize, reported_levels: usize) -> Result<Self, DataError> {
        let schema = Schema {
            covariates,
            true_levels,
            reported_levels,
            outcome_labels: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_outcome_labels(mut self, labels: &[&str]) -> Result<Self, DataError> {
        self.outcome_labels = Some(labels.iter().map(|s| s.to_string()).collect());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Schema(msg));
        if self.true_levels < 2 || self.true_levels > Level::MAX_LEVELS {
            return bad(format!("true outcome needs between 2 and {} levels", Level::MAX_LEVELS));
        }
        if self.reported_levels < 2 || self.reported_levels > self.true_levels {
            return bad(format!(
                "reported outcome needs at least 2 and at most {} levels, got {}",
                self.true_levels, self.reported_levels
            ));
        }
        if let Some(labels) = &self.outcome_labels {
            if labels.len() != self.true_levels {
                return bad(format!("{} outcome labels for {} true levels", labels.len(), self.true_levels));
            }
            check_unique(labels, "outcome")?;
        }
        let mut cells: usize = 1;
        for (i, c) in self.covariates.iter().enumerate() {
            if c.levels < 2 || c.levels > Level::MAX_LEVELS {
                return bad(format!("covariate `{}` needs at least 2 levels", c.name));
            }
            if self.covariates[..i].iter().any(|o| o.name == c.name) {
                return bad(format!("duplicate covariate `{}`", c.name));
            }
            if let Some(labels) = &c.labels {
                if labels.len() != c.levels {
                    return bad(format!("covariate `{}` has {} labels for {} levels", c.name, labels.len(), c.levels));
                }
                check_unique(labels, &c.name)?;
            }
            cells = cells
                .checked_mul(c.levels)
                .filter(|&n| n <= u32::MAX as usize)
                .ok_or_else(|| DataError::Schema("too many covariate cells".into()))?;
        }
        Ok(())
    }

    /// d_X, the number of covariate combinations.
    pub fn n_cells(&self) -> usize {
        self.covariates.iter().map(|c| c.levels).product()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Dense code of a level tuple; the first covariate varies slowest.
    pub fn encode(&self, levels: &[Level]) -> usize {
        debug_assert_eq!(levels.len(), self.covariates.len());
        levels
            .iter()
            .zip(&self.covariates)
            .fold(0, |code, (l, c)| code * c.levels + l.index())
    }

    pub fn decode(&self, code: usize) -> CellIndex {
        let mut levels = vec![Level::default(); self.covariates.len()];
        let mut rest = code;
        for (slot, c) in levels.iter_mut().zip(&self.covariates).rev() {
            *slot = Level::from_index(rest % c.levels);
            rest /= c.levels;
        }
        CellIndex { code, levels }
    }

    /// Level of covariate `var` within the cell with dense code `code`.
    pub fn level_in_cell(&self, code: usize, var: usize) -> Level {
        let stride: usize = self.covariates[var + 1..].iter().map(|c| c.levels).product();
        Level::from_index((code / stride) % self.covariates[var].levels)
    }

    pub fn is_reportable(&self, y: Level) -> bool {
        y.index() < self.reported_levels
    }

    pub fn outcome_label(&self, level: Level) -> String {
        level_text(self.outcome_labels.as_deref(), level)
    }

    pub fn parse_true_level(&self, text: &str) -> Option<Level> {
        parse_level_text(self.outcome_labels.as_deref(), self.true_levels, text)
    }

    pub fn parse_reported_level(&self, text: &str) -> Option<Level> {
        parse_level_text(self.outcome_labels.as_deref(), self.true_levels, text)
            .filter(|l| l.index() < self.reported_levels)
    }

    pub fn cell_label(&self, code: usize) -> String {
        let cell = self.decode(code);
        cell.levels
            .iter()
            .zip(&self.covariates)
            .map(|(l, c)| format!("{}={}", c.name, c.label(*l)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn check_unique(labels: &[String], what: &str) -> Result<(), DataError> {
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(DataError::Schema(format!("duplicate label `{l}` for {what}")));
        }
    }
    Ok(())
}

fn level_text(labels: Option<&[String]>, level: Level) -> String {
    match labels {
        Some(l) => l[level.index()].clone(),
        None => level.one_based().to_string(),
    }
}

fn parse_level_text(labels: Option<&[String]>, n_levels: usize, text: &str) -> Option<Level> {
    let text = text.trim();
    match labels {
        Some(labels) => labels.iter().position(|l| l == text).map(Level::from_index),
        None => text
            .parse::<usize>()
            .ok()
            .and_then(Level::from_one_based)
            .filter(|l| l.index() < n_levels),
    }
}

/// One combination of covariate levels with its dense code in `[0, d_X)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub code: usize,
    pub levels: Vec<Level>,
}

/// All d_X cells in lexicographic order (first covariate slowest).
pub fn enumerate_cells(schema: &Schema) -> Vec<CellIndex> {
    (0..schema.n_cells()).map(|code| schema.decode(code)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nscg_schema() -> Schema {
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

    #[test]
    fn single_binary_covariate_has_two_cells() {
        let s = Schema::new(vec![Covariate::new("a", 2)], 2, 2).unwrap();
        assert_eq!(enumerate_cells(&s).len(), 2);
    }

    #[test]
    fn nscg_shape_has_sixteen_cells() {
        assert_eq!(enumerate_cells(&nscg_schema()).len(), 16);
    }

    #[test]
    fn mixed_radix_code_matches_brute_force_enumeration() {
        let s = Schema::new(
            vec![Covariate::new("a", 2), Covariate::new("b", 3), Covariate::new("c", 2)],
            2,
            2,
        )
        .unwrap();
        // brute force: nested loops in lexicographic order
        let mut expected = Vec::new();
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..2 {
                    expected.push(vec![a, b, c]);
                }
            }
        }
        let cells = enumerate_cells(&s);
        assert_eq!(cells.len(), 12);
        for (i, cell) in cells.iter().enumerate() {
            assert_eq!(cell.code, i);
            let idx: Vec<usize> = cell.levels.iter().map(|l| l.index()).collect();
            assert_eq!(idx, expected[i]);
        }
        let last = [Level::from_index(1), Level::from_index(2), Level::from_index(1)];
        assert_eq!(s.encode(&last), 11);
    }

    #[test]
    fn level_in_cell_agrees_with_decode() {
        let s = nscg_schema();
        for cell in enumerate_cells(&s) {
            for v in 0..3 {
                assert_eq!(s.level_in_cell(cell.code, v), cell.levels[v]);
            }
        }
    }

    #[test]
    fn rejects_bad_level_counts() {
        assert!(Schema::new(vec![Covariate::new("a", 1)], 2, 2).is_err());
        assert!(Schema::new(vec![Covariate::new("a", 2)], 3, 4).is_err());
        assert!(Schema::new(vec![Covariate::new("a", 2)], 2, 1).is_err());
        assert!(Schema::new(vec![Covariate::new("a", 2), Covariate::new("a", 3)], 2, 2).is_err());
    }

    #[test]
    fn reported_levels_share_outcome_labels() {
        let s = nscg_schema()
            .with_outcome_labels(&["BA", "MA", "Prof", "PhD", "None"])
            .unwrap();
        assert_eq!(s.parse_true_level("None"), Some(Level::from_index(4)));
        assert_eq!(s.parse_reported_level("None"), None);
        assert_eq!(s.parse_reported_level("PhD"), Some(Level::from_index(3)));
        assert_eq!(s.parse_reported_level("Assoc"), None);
    }

    #[test]
    fn level_serializes_one_based() {
        let l = Level::from_index(2);
        assert_eq!(serde_json::to_string(&l).unwrap(), "3");
        let back: Level = serde_json::from_str("3").unwrap();
        assert_eq!(back, l);
        assert!(serde_json::from_str::<Level>("0").is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips(dims in proptest::collection::vec(2usize..5, 1..5), seed in 0usize..10_000) {
            let covs = dims.iter().enumerate().map(|(i, &d)| Covariate::new(format!("v{i}"), d)).collect();
            let s = Schema::new(covs, 3, 2).unwrap();
            let code = seed % s.n_cells();
            let cell = s.decode(code);
            prop_assert_eq!(s.encode(&cell.levels), code);
        }
    }
}
