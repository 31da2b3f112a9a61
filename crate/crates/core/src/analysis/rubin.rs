use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::AnalysisError;

const Z975: f64 = 1.959_963_984_540_054;

/// Multiple-imputation estimate combined across M completed datasets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub q_bar: f64,
    pub u_bar: f64,
    pub b: f64,
    pub t: f64,
    /// Reference degrees of freedom; infinite when `b` is zero.
    pub df: f64,
    pub ci95: (f64, f64),
    pub m: usize,
}

impl MIEstimate {
    pub fn se(&self) -> f64 {
        self.t.sqrt()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci95.0 <= x && x <= self.ci95.1
    }

    pub fn overlaps(&self, other: &MIEstimate) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }
}

/// 0.975 quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile_975(df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return Z975;
    }
    StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(0.975)
}

/// Rubin's combining rules over `(q_m, u_m)` pairs.
pub fn rubin_combine(estimates: &[(f64, f64)]) -> Result<MIEstimate, AnalysisError> {
    let m = estimates.len();
    if m < 2 {
        return Err(AnalysisError::TooFewImputations(m));
    }
    if let Some(&(_, u)) = estimates.iter().find(|(_, u)| !(*u >= 0.0)) {
        return Err(AnalysisError::NegativeVariance(u));
    }
    let mf = m as f64;
    let q_bar = estimates.iter().map(|e| e.0).sum::<f64>() / mf;
    let u_bar = estimates.iter().map(|e| e.1).sum::<f64>() / mf;
    let b = estimates.iter().map(|e| (e.0 - q_bar).powi(2)).sum::<f64>() / (mf - 1.0);
    let inflated = (1.0 + 1.0 / mf) * b;
    let t = u_bar + inflated;
    let df = if b > 0.0 {
        (mf - 1.0) * (1.0 + u_bar / inflated).powi(2)
    } else {
        f64::INFINITY
    };
    let half = t_quantile_975(df) * t.sqrt();
    Ok(MIEstimate {
        q_bar,
        u_bar,
        b,
        t,
        df,
        ci95: (q_bar - half, q_bar + half),
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Student t density integrated by Simpson's rule, inverted by bisection.
    fn t_quantile_oracle(df: f64, p: f64) -> f64 {
        let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let dens = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let cdf = |x: f64| {
            // substitute x = tan(s) on (-pi/2, atan x] to tame the tails
            let (a, b) = (-std::f64::consts::FRAC_PI_2 + 1e-12, x.atan());
            let n = 20000;
            let h = (b - a) / n as f64;
            let f = |s: f64| dens(s.tan()) / s.cos().powi(2);
            let mut acc = f(a) + f(b);
            for i in 1..n {
                acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    fn ln_gamma(x: f64) -> f64 {
        // Lanczos, g = 7
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let t = x + 7.5;
        let mut a = C[0];
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    #[test]
    fn zero_between_variance() {
        let e = rubin_combine(&[(1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!((e.q_bar, e.b, e.t), (1.0, 0.0, 0.5));
        assert!(e.df.is_infinite());
        assert!((e.ci95.1 - 1.0 - Z975 * 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_imputation_hand_values() {
        let e = rubin_combine(&[(1.0, 1.0), (3.0, 1.0)]).unwrap();
        assert_eq!((e.q_bar, e.u_bar, e.b, e.t, e.m), (2.0, 1.0, 2.0, 4.0, 2));
        assert!((e.df - 16.0 / 9.0).abs() < 1e-12);
        let q = t_quantile_oracle(16.0 / 9.0, 0.975);
        assert!((e.ci95.1 - 2.0 - 2.0 * q).abs() < 1e-6, "{:?} vs {q}", e.ci95);
        assert!(((e.ci95.0 + e.ci95.1) / 2.0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantiles_match_integration() {
        for df in [1.0, 2.5, 7.0, 40.0, 300.0] {
            let q = t_quantile_oracle(df, 0.975);
            assert!((t_quantile_975(df) - q).abs() < 1e-6, "df {df}");
        }
        assert!((t_quantile_975(1.0) - 12.706_204_736).abs() < 1e-6);
    }

    #[test]
    fn tiny_jitter_approaches_design_interval() {
        let est: Vec<_> = (0..50).map(|i| (5.0 + 1e-9 * (i as f64 - 24.5), 0.04)).collect();
        let e = rubin_combine(&est).unwrap();
        let width = e.ci95.1 - e.ci95.0;
        assert!((width - 2.0 * Z975 * 0.2).abs() < 1e-6, "{width}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(rubin_combine(&[(1.0, 1.0)]), Err(AnalysisError::TooFewImputations(1))));
        assert!(matches!(rubin_combine(&[(1.0, 1.0), (1.0, -1.0)]), Err(AnalysisError::NegativeVariance(_))));
    }

    #[test]
    fn df_non_increasing_in_b() {
        let mut last = f64::INFINITY;
        for spread in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let e = rubin_combine(&[(-spread, 1.0), (0.0, 1.0), (spread, 1.0)]).unwrap();
            assert!(e.df <= last && e.t >= e.u_bar);
            last = e.df;
        }
    }
}
