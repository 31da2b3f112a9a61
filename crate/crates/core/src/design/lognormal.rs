use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::EstimationError;

/// Eigenvalue floor applied when τ has to be projected onto the PSD cone.
pub const EIGEN_FLOOR: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-9;

/// Parameters of a multivariate log-normal: log T ~ Normal(mu, tau).
#[derive(Clone, Debug, PartialEq)]
pub struct LogNormalParams {
    pub mu: DVector<f64>,
    pub tau: DMatrix<f64>,
    /// Whether τ had a negative eigenvalue and was projected.
    pub projected: bool,
}

/// Chooses (μ, τ) so the log-normal has mean `t_hat` and covariance `sigma_hat`:
///
/// ```text
/// τ[j,i] = log(1 + Σ[j,i] / (T_j T_i))
/// μ_j    = log(T_j) - τ[j,j] / 2
/// ```
///
/// τ is symmetrized and, when it has a negative eigenvalue, rebuilt with
/// eigenvalues clamped at [`EIGEN_FLOOR`]. The error's `cell` field is 0;
/// callers fill it in.
pub fn moment_match_lognormal(t_hat: &[f64], sigma_hat: &DMatrix<f64>) -> Result<LogNormalParams, EstimationError> {
    let d = t_hat.len();
    check_covariance(sigma_hat, d)?;
    for (k, &t) in t_hat.iter().enumerate() {
        if !(t > 0.0) || !t.is_finite() {
            return Err(EstimationError::NonPositiveTotal {
                cell: 0,
                level: k,
                value: t,
            });
        }
    }
    let mut tau = DMatrix::from_fn(d, d, |j, i| {
        let s = 0.5 * (sigma_hat[(j, i)] + sigma_hat[(i, j)]);
        // covariances below -T_j T_i are not representable; the floor keeps
        // the log finite and the projection below repairs the matrix
        let r = s / (t_hat[j] * t_hat[i]);
        if r > -1.0 {
            r.ln_1p()
        } else {
            1e-300f64.ln()
        }
    });
    let projected = project_psd(&mut tau);
    let mu = DVector::from_fn(d, |j, _| t_hat[j].ln() - tau[(j, j)] / 2.0);
    Ok(LogNormalParams { mu, tau, projected })
}

/// Mean vector and covariance matrix of the log-normal with parameters (μ, τ).
pub fn lognormal_moments(mu: &DVector<f64>, tau: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = mu.len();
    let mean = DVector::from_fn(d, |j, _| (mu[j] + tau[(j, j)] / 2.0).exp());
    let cov = DMatrix::from_fn(d, d, |j, i| mean[j] * mean[i] * tau[(j, i)].exp_m1());
    (mean, cov)
}

pub(crate) fn check_covariance(m: &DMatrix<f64>, d: usize) -> Result<(), EstimationError> {
    if m.nrows() != d || m.ncols() != d {
        return Err(EstimationError::Dimension(format!(
            "covariance is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    for j in 0..d {
        if m[(j, j)] < 0.0 {
            return Err(EstimationError::BadCovariance(format!("negative variance at {j}")));
        }
        for i in 0..d {
            let (a, b) = (m[(j, i)], m[(i, j)]);
            if !a.is_finite() {
                return Err(EstimationError::BadCovariance(format!("non-finite entry at ({j},{i})")));
            }
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(EstimationError::BadCovariance(format!(
                    "not symmetric at ({j},{i}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Symmetrizes in place and clamps negative eigenvalues. Returns whether
/// the clamp fired. Eigenvalues within round-off of zero count as zero.
pub(crate) fn project_psd(m: &mut DMatrix<f64>) -> bool {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
    let eig = SymmetricEigen::new(m.clone());
    let tol = f64::EPSILON * eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().all(|&l| l >= -tol) {
        return false;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    *m = (&rebuilt + rebuilt.transpose()) * 0.5;
    true
}

/// A matrix L with L Lᵀ = τ, built from the eigendecomposition so that
/// singular τ (zero variances) is fine.
pub(crate) fn sqrt_factor(tau: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(tau.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}
