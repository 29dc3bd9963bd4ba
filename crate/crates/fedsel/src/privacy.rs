//! Gradient clipping, Gaussian-mechanism noise, and privacy-budget
//! accounting.
//!
//! A client's round update is clipped to L2 norm `C` and then perturbed
//! with independent `N(0, sigma^2)` noise per coordinate, where
//! `sigma = C * sqrt(2 ln(1.25/delta)) / epsilon`. Clipping must precede
//! noising: the noise scale is calibrated to the clipped sensitivity.
//! Budgets compose linearly across rounds (basic composition), so after
//! `t` rounds the ledger reads exactly `t * epsilon_round`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::GradientVector;

/// Per-round privacy settings with the derived noise scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub enabled: bool,
    pub epsilon_round: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub sigma: f64,
}

impl PrivacyParams {
    pub fn enabled(epsilon_round: f64, delta: f64, clip_norm: f64) -> Result<Self> {
        let sigma = calibrate_sigma(epsilon_round, delta, clip_norm)?;
        Ok(Self { enabled: true, epsilon_round, delta, clip_norm, sigma })
    }

    /// Disabled privacy: the sigma = 0 path is the identity and records
    /// nothing in the ledger.
    pub fn disabled() -> Self {
        Self { enabled: false, epsilon_round: 0.0, delta: 0.0, clip_norm: 0.0, sigma: 0.0 }
    }
}

/// Cumulative spend under basic composition.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BudgetLedger {
    pub rounds_completed: u64,
    pub epsilon_total: f64,
    pub delta_total: f64,
}

impl BudgetLedger {
    /// Account one round of release. Totals are recomputed as
    /// `rounds * per_round` so they stay exactly linear in the round count.
    pub fn record_round(&mut self, params: &PrivacyParams) {
        if !params.enabled {
            return;
        }
        self.rounds_completed += 1;
        self.epsilon_total = self.rounds_completed as f64 * params.epsilon_round;
        self.delta_total = self.rounds_completed as f64 * params.delta;
    }
}

/// Scale `grad` by `min(1, C/||grad||)`: norm at most `C`, direction kept.
pub fn clip(grad: &GradientVector, clip_norm: f64) -> GradientVector {
    let norm = grad.l2_norm();
    if norm <= clip_norm {
        return grad.clone();
    }
    let scale = clip_norm / norm;
    GradientVector { values: grad.values.iter().map(|v| v * scale).collect() }
}

/// Gaussian-mechanism noise scale `C * sqrt(2 ln(1.25/delta)) / epsilon`.
pub fn calibrate_sigma(epsilon: f64, delta: f64, clip_norm: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(clip_norm > 0.0) {
        return Err(Error::Parameter(format!("clip norm must be positive, got {clip_norm}")));
    }
    Ok(clip_norm * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Add independent `N(0, sigma^2)` noise per coordinate. `sigma = 0`
/// returns the input unchanged without consuming any draws.
pub fn add_noise(grad: &GradientVector, sigma: f64, rng: &mut impl Rng) -> GradientVector {
    if sigma == 0.0 {
        return grad.clone();
    }
    GradientVector {
        values: grad
            .values
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + sigma * z
            })
            .collect(),
    }
}
