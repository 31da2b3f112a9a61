use serde::{Deserialize, Serialize};

use super::error_model::ErrorModelSpec;
use super::reporting::ReportingModelSpec;
use crate::error::ModelError;
use crate::schema::Schema;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    OverParameterized,
}

/// Parameter counting for the error and reporting models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
    /// (d_Z + d_Y - 1) d_X independent pieces of information.
    pub info_available: usize,
    /// (d_Y d_Z - 1) d_X parameters of the saturated joint of (Y, Z | X).
    pub saturated_need: usize,
    /// (d_Z - 1) d_X, the most error and reporting parameters the data identify.
    pub max_error_reporting_params: usize,
    pub error_params: usize,
    pub reporting_params: usize,
    pub requested_params: usize,
    pub verdict: Verdict,
}

impl IdentifiabilityReport {
    /// Counts only; the requested parameters are filled in by
    /// [`check_identifiability`].
    pub fn for_shape(d_x: usize, d_y: usize, d_z: usize) -> Self {
        IdentifiabilityReport {
            d_x,
            d_y,
            d_z,
            info_available: (d_z + d_y - 1) * d_x,
            saturated_need: (d_y * d_z - 1) * d_x,
            max_error_reporting_params: (d_z - 1) * d_x,
            error_params: 0,
            reporting_params: 0,
            requested_params: 0,
            verdict: Verdict::Ok,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.verdict == Verdict::Ok
    }
}

impl std::fmt::Display for IdentifiabilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "d_X = {}, d_Y = {}, d_Z = {}", self.d_x, self.d_y, self.d_z)?;
        writeln!(f, "information available:         {}", self.info_available)?;
        writeln!(f, "saturated model needs:         {}", self.saturated_need)?;
        writeln!(f, "identifiable error+reporting:  {}", self.max_error_reporting_params)?;
        writeln!(
            f,
            "requested:                     {} ({} error + {} reporting)",
            self.requested_params, self.error_params, self.reporting_params
        )?;
        write!(
            f,
            "verdict:                       {}",
            match self.verdict {
                Verdict::Ok => "ok",
                Verdict::OverParameterized => "over-parameterized",
            }
        )
    }
}

pub fn check_identifiability(
    schema: &Schema,
    err: &ErrorModelSpec,
    rep: &ReportingModelSpec,
) -> Result<IdentifiabilityReport, ModelError> {
    err.compile(schema)?;
    let mut r = IdentifiabilityReport::for_shape(schema.n_cells(), schema.true_levels, schema.reported_levels);
    r.error_params = err.n_params();
    r.reporting_params = rep.free_params(schema)?;
    r.requested_params = r.error_params + r.reporting_params;
    r.verdict = if r.requested_params > r.max_error_reporting_params {
        Verdict::OverParameterized
    } else {
        Verdict::Ok
    };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BetaPrior, DesignTerm, NormalPrior};
    use crate::schema::Covariate;

    fn nscg() -> Schema {
        Schema::new(
            vec![Covariate::new("sex", 2), Covariate::new("age", 4), Covariate::new("black", 2)],
            5,
            4,
        )
        .unwrap()
    }

    #[test]
    fn nscg_counts() {
        let r = IdentifiabilityReport::for_shape(16, 5, 4);
        assert_eq!((r.info_available, r.saturated_need, r.max_error_reporting_params), (128, 304, 48));
    }

    #[test]
    fn model_one_is_identified() {
        let s = nscg();
        let terms = vec![DesignTerm::Intercept, DesignTerm::truth(1), DesignTerm::truth(2), DesignTerm::truth(3)];
        let err = ErrorModelSpec::general_logistic(terms, vec![NormalPrior::FLAT; 4]);
        let r = check_identifiability(&s, &err, &ReportingModelSpec::by_truth(vec![])).unwrap();
        assert_eq!(r.requested_params, 15);
        assert!(r.is_ok());
    }

    #[test]
    fn saturated_reporting_is_over_parameterized() {
        let s = nscg();
        let err = ErrorModelSpec::group_saturated(vec![DesignTerm::Intercept], vec![BetaPrior::FLAT]);
        let rep = ReportingModelSpec::by_truth(vec!["sex".into(), "age".into(), "black".into()]);
        let r = check_identifiability(&s, &err, &rep).unwrap();
        assert_eq!(r.reporting_params, 16 * 11);
        assert_eq!(r.verdict, Verdict::OverParameterized);
    }
}
