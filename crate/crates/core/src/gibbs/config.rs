use serde::{Deserialize, Serialize};

use crate::error::SamplerError;

/// When θ*_x is redrawn from the gold-file posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRedraw {
    /// A fresh θ* every sweep.
    #[default]
    PerIteration,
    /// One θ* for burn-in, then one per saved imputation, drawn at the start
    /// of the block of sweeps that ends in that save.
    PerImputation,
}

/// How the true values are drawn in each sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Records sharing a cell and a reported value are exchangeable, so each
    /// sweep draws their multinomial counts; individual values are assigned
    /// by a random permutation when a state is saved.
    #[default]
    Lumped,
    /// One categorical draw per record. Same stationary law, much slower.
    PerRecord,
}

fn default_iterations() -> usize {
    100_000
}

fn default_imputations() -> usize {
    50
}

fn default_mh_step() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Defaults to half the iterations.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_imputations")]
    pub imputations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial random-walk scale for logistic coefficients.
    #[serde(default = "default_mh_step")]
    pub mh_step: f64,
    /// Last iteration with step-size adaptation; defaults to burn_in / 2.
    #[serde(default)]
    pub adapt_until: Option<usize>,
    #[serde(default)]
    pub theta_redraw: ThetaRedraw,
    #[serde(default)]
    pub sweep: SweepMode,
    #[serde(default)]
    pub allow_overparameterized: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: default_iterations(),
            burn_in: None,
            imputations: default_imputations(),
            seed: 0,
            mh_step: default_mh_step(),
            adapt_until: None,
            theta_redraw: ThetaRedraw::default(),
            sweep: SweepMode::default(),
            allow_overparameterized: false,
        }
    }
}

impl GibbsConfig {
    pub fn new(iterations: usize, imputations: usize, seed: u64) -> Self {
        GibbsConfig {
            iterations,
            imputations,
            seed,
            ..Default::default()
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    pub fn adapt_until(&self) -> usize {
        self.adapt_until.unwrap_or(self.burn_in() / 2)
    }

    /// Sweeps between saved states.
    pub fn stride(&self) -> usize {
        (self.iterations - self.burn_in()) / self.imputations
    }

    /// Iteration at which imputation `m` (zero-based) is saved.
    pub fn save_iteration(&self, m: usize) -> usize {
        self.burn_in() + (m + 1) * self.stride() - 1
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::Config(m));
        if self.imputations == 0 {
            return bad("at least one imputation is needed".into());
        }
        if self.burn_in() >= self.iterations {
            return bad(format!("burn_in {} must be below iterations {}", self.burn_in(), self.iterations));
        }
        if self.imputations > self.iterations - self.burn_in() {
            return bad(format!(
                "{} imputations do not fit in {} post-burn-in iterations",
                self.imputations,
                self.iterations - self.burn_in()
            ));
        }
        if !(self.mh_step > 0.0) || !self.mh_step.is_finite() {
            return bad(format!("mh_step must be positive, got {}", self.mh_step));
        }
        Ok(())
    }
}
