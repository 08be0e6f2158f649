use serde::{Deserialize, Serialize};

use super::DomainError;

/// Objective strengths and optimizer controls.
///
/// `alpha` scales the pull toward uniform weights, `beta` the sparsity
/// penalty, `lambda_kl` / `lambda_cal` the divergence and calibration terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_kl: f64,
    pub lambda_cal: f64,
    /// Coordinates above this count as non-zero in the sparsity term; below
    /// it they are floored away in reported results.
    pub nonzero_epsilon: f64,
    /// Additive mass given to every bin before evaluating a divergence.
    pub smoothing_epsilon: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Forward-difference step for numerical gradients.
    pub fd_step: f64,
    pub rng_seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            lambda_kl: 0.2,
            lambda_cal: 0.8,
            nonzero_epsilon: 1e-3,
            smoothing_epsilon: 1e-9,
            restarts: 8,
            max_iterations: 1000,
            tolerance: 1e-6,
            fd_step: 1e-6,
            rng_seed: 0,
        }
    }
}

impl HyperParams {
    pub fn with_strengths(alpha: f64, beta: f64, lambda_kl: f64, lambda_cal: f64) -> Self {
        Self {
            alpha,
            beta,
            lambda_kl,
            lambda_cal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: &str| Err(DomainError::InvalidHyperParams(msg.into()));
        let strengths = [self.alpha, self.beta, self.lambda_kl, self.lambda_cal];
        if strengths.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("alpha, beta, lambda_kl and lambda_cal must be finite and non-negative");
        }
        if strengths.iter().sum::<f64>() <= 0.0 {
            return bad("at least one objective strength must be positive");
        }
        if !(self.nonzero_epsilon > 0.0 && self.nonzero_epsilon < 1.0) {
            return bad("nonzero_epsilon must lie in (0, 1)");
        }
        if !(self.smoothing_epsilon > 0.0 && self.smoothing_epsilon.is_finite()) {
            return bad("smoothing_epsilon must be positive");
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return bad("tolerance must be positive");
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return bad("fd_step must lie in (0, 0.1)");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        Ok(())
    }
}
