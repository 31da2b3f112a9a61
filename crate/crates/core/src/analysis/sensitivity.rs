use std::path::Path;

use serde::{Deserialize, Serialize};

use super::estimands::{combine_estimand, EstimandSpec};
use crate::data::{csv_error, csv_writer, finish_csv};
use crate::error::{AnalysisError, Error};
use crate::gibbs::ImputationSet;

pub const REPORT_COLUMNS: [&str; 8] = ["estimand", "model", "qBar", "lo", "hi", "df", "M", "overlaps"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimand: String,
    pub model: String,
    pub q_bar: f64,
    pub lo: f64,
    pub hi: f64,
    pub df: f64,
    pub m: usize,
    /// Models whose interval for the same estimand overlaps this one.
    pub overlaps: Vec<String>,
}

/// One row per (estimand, model), estimands outermost.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub rows: Vec<ReportRow>,
}

/// Formats like C's `%.6g`.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mant), exp.abs())
    } else {
        trim(&format!("{x:.*}", (5 - exp) as usize))
    }
}

/// MI estimates of every estimand on every run, without overlap checks.
pub fn estimate_table(runs: &[(String, &ImputationSet)], estimands: &[EstimandSpec]) -> Result<EstimateTable, Error> {
    if let Some((first, rest)) = runs.split_first() {
        for r in rest {
            if r.1.schema != first.1.schema {
                return Err(AnalysisError::SchemaMismatch(first.0.clone(), r.0.clone()).into());
            }
        }
    }
    let mut rows = Vec::new();
    for spec in estimands {
        let start = rows.len();
        for (label, set) in runs {
            let res = combine_estimand(set, spec)?;
            let (q, lo, hi, df) = match res.estimate {
                Some(e) => (e.q_bar, e.ci95.0, e.ci95.1, e.df),
                None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };
            rows.push(ReportRow {
                estimand: spec.name.clone(),
                model: label.clone(),
                q_bar: q,
                lo,
                hi,
                df,
                m: res.m_used,
                overlaps: Vec::new(),
            });
        }
        let block = &mut rows[start..];
        for i in 0..block.len() {
            let mut o = Vec::new();
            for j in 0..block.len() {
                if i != j && block[i].lo <= block[j].hi && block[j].lo <= block[i].hi {
                    o.push(block[j].model.clone());
                }
            }
            block[i].overlaps = o;
        }
    }
    Ok(EstimateTable { rows })
}

/// Compares model runs estimand by estimand.
pub fn sensitivity_report(runs: &[(String, &ImputationSet)], estimands: &[EstimandSpec]) -> Result<EstimateTable, Error> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewRuns(runs.len()).into());
    }
    estimate_table(runs, estimands)
}

impl EstimateTable {
    pub fn rows_for<'a>(&'a self, estimand: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.estimand == estimand)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        let mut w = csv_writer(path)?;
        w.write_record(REPORT_COLUMNS).map_err(csv_error(path))?;
        for r in &self.rows {
            w.write_record([
                r.estimand.clone(),
                r.model.clone(),
                format_sig6(r.q_bar),
                format_sig6(r.lo),
                format_sig6(r.hi),
                format_sig6(r.df),
                r.m.to_string(),
                r.overlaps.join(";"),
            ])
            .map_err(csv_error(path))?;
        }
        finish_csv(path, w)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![REPORT_COLUMNS[..7].iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.estimand.clone(),
                r.model.clone(),
                format_sig6(r.q_bar),
                format_sig6(r.lo),
                format_sig6(r.hi),
                format_sig6(r.df),
                r.m.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..7).map(|j| cells.iter().map(|c| c[j].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for c in &cells {
            let line: Vec<String> = c.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(1.777_777_777), "1.77778");
        assert_eq!(format_sig6(-0.000_123_456_78), "-0.000123457");
        assert_eq!(format_sig6(123_456_789.0), "1.23457e+08");
        assert_eq!(format_sig6(999_999.5), "1e+06");
        assert_eq!(format_sig6(12_345.67), "12345.7");
        assert_eq!(format_sig6(f64::INFINITY), "inf");
        assert_eq!(format_sig6(0.0), "0");
    }
}
