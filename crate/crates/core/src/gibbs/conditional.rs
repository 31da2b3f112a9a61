use crate::error::SamplerError;
use crate::models::{CompiledErrorModel, CompiledReporting, ReportingTables};
use crate::schema::Level;

/// Error and reporting models with their current parameters.
#[derive(Clone, Copy)]
pub struct ModelState<'a> {
    pub error: &'a CompiledErrorModel,
    pub error_params: &'a [f64],
    pub reporting: &'a CompiledReporting,
    pub tables: &'a ReportingTables,
}

/// Unnormalized Pr(Y = k | Z = z, cell) written into `out`:
///
/// ```text
/// k = z:                θ_k (1 - g(x, k))
/// k ≠ z, k reportable:  θ_k g(x, k) p_k(z)
/// k unreportable:       θ_k p_k(z)
/// ```
///
/// Returns the sum of the weights.
#[inline]
pub fn conditional_weights(cell: usize, z: usize, theta: &[f64], m: &ModelState<'_>, out: &mut [f64]) -> f64 {
    let g_rep = m.reporting.group_of_cell[cell];
    let mut sum = 0.0;
    for (k, w) in out.iter_mut().enumerate() {
        let g = m.error.probability(m.error_params, cell, k);
        let lik = if k == z { 1.0 - g } else { g * m.tables.row(g_rep, k)[z] };
        *w = theta[k] * lik;
        sum += *w;
    }
    sum
}

/// Normalized full conditional of the true value for a record in `cell`
/// that reported `z`.
pub fn full_conditional_y(
    record: usize,
    cell: usize,
    z: Level,
    theta: &[f64],
    m: &ModelState<'_>,
) -> Result<Vec<f64>, SamplerError> {
    let mut w = vec![0.0; theta.len()];
    let s = conditional_weights(cell, z.index(), theta, m, &mut w);
    if !(s > 0.0) || !s.is_finite() {
        return Err(SamplerError::DegenerateConditional { record });
    }
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BetaPrior, DesignTerm, ErrorModelSpec, ReportingModelSpec};
    use crate::schema::{Covariate, Schema};

    fn setup(d_y: usize, d_z: usize) -> (Schema, CompiledErrorModel, CompiledReporting) {
        let s = Schema::new(vec![Covariate::new("a", 2)], d_y, d_z).unwrap();
        let e = ErrorModelSpec::group_saturated(vec![DesignTerm::Intercept], vec![BetaPrior::FLAT]).compile(&s).unwrap();
        let r = ReportingModelSpec::by_truth(vec![]).compile(&s).unwrap();
        (s, e, r)
    }

    #[test]
    fn no_error_limit_is_point_mass() {
        let (_, e, r) = setup(3, 3);
        let t = r.prior_mean_tables();
        let m = ModelState { error: &e, error_params: &[0.0], reporting: &r, tables: &t };
        let p = full_conditional_y(0, 0, Level::from_index(1), &[0.2, 0.5, 0.3], &m).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_level_hand_enumeration() {
        let (_, e, r) = setup(2, 2);
        let t = r.prior_mean_tables();
        let m = ModelState { error: &e, error_params: &[0.1], reporting: &r, tables: &t };
        // z = 1: y=1 -> .5 * .9 = .45, y=2 -> .5 * .1 * 1 = .05
        let p = full_conditional_y(0, 1, Level::from_index(0), &[0.5, 0.5], &m).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn unreportable_level_gets_mass() {
        let (_, e, r) = setup(5, 4);
        let t = r.prior_mean_tables();
        let m = ModelState { error: &e, error_params: &[0.05], reporting: &r, tables: &t };
        let theta = [0.3, 0.2, 0.1, 0.1, 0.3];
        let p = full_conditional_y(0, 0, Level::from_index(0), &theta, &m).unwrap();
        let w5 = 0.3 * 0.25;
        let total = 0.3 * 0.95 + 0.2 * 0.05 / 3.0 + 0.1 * 0.05 / 3.0 * 2.0 + w5;
        assert!((p[4] - w5 / total).abs() < 1e-14);
        assert!(p[4] > 0.0);
    }

    #[test]
    fn degenerate_weights_name_the_record() {
        let (_, e, r) = setup(2, 2);
        let t = r.prior_mean_tables();
        let m = ModelState { error: &e, error_params: &[1.0], reporting: &r, tables: &t };
        // every report wrong, but the only other truth has zero probability
        let err = full_conditional_y(17, 0, Level::from_index(0), &[1.0, 0.0], &m).unwrap_err();
        assert!(matches!(err, SamplerError::DegenerateConditional { record: 17 }));
    }
}
