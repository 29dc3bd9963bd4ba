//! Utility scoring, top-K selection, and the adaptive-K rule.
//!
//! Each client's utility is a convex combination of its normalized shard
//! size (the data term) and normalized compute capacity, so scores live in
//! `[0, 1]` and are unit-free. Between rounds, K shrinks 20% when the round
//! blew the time budget and grows by one when accuracy stagnated; the time
//! rule wins when both apply.

use crate::error::{Error, Result};

/// Per-client facts the selector scores against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientStats {
    pub client_id: u64,
    pub n_samples: u64,
    /// Local SGD steps per simulated second.
    pub compute_capacity: f64,
    pub last_seen_round: u64,
    /// Previous local loss minus current. Carried for a staleness-aware
    /// scoring extension; the default utility formula ignores it.
    pub recent_loss_delta: f64,
}

/// A client's scalar selection score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityScore {
    pub client_id: u64,
    pub score: f64,
}

/// Registry-wide maxima used to normalize raw stats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistryMaxima {
    pub max_n_samples: u64,
    pub max_capacity: f64,
}

/// Selection knobs: K bounds, utility weights, and the adaptive-K thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub k_init: u64,
    pub k_min: u64,
    pub k_max: u64,
    pub w_data: f64,
    pub w_compute: f64,
    /// `None` disables the shrink rule.
    pub time_budget_per_round: Option<f64>,
    pub min_accuracy_gain: f64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.k_min && self.k_min <= self.k_init && self.k_init <= self.k_max) {
            return Err(Error::Parameter(format!(
                "selection bounds must satisfy 1 <= k_min <= k_init <= k_max, got {}/{}/{}",
                self.k_min, self.k_init, self.k_max
            )));
        }
        if self.w_data < 0.0 || self.w_compute < 0.0 {
            return Err(Error::Parameter("utility weights must be non-negative".into()));
        }
        if (self.w_data + self.w_compute - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "utility weights must sum to 1, got {} + {}",
                self.w_data, self.w_compute
            )));
        }
        if let Some(budget) = self.time_budget_per_round {
            if !(budget > 0.0) {
                return Err(Error::Parameter(format!(
                    "time budget must be positive, got {budget}"
                )));
            }
        }
        Ok(())
    }
}

/// Score one client: `w_data * n/max_n + w_compute * cap/max_cap`, clamped
/// to `[0, 1]`.
pub fn compute_utility(stats: &ClientStats, maxima: &RegistryMaxima, cfg: &SelectionConfig) -> UtilityScore {
    let data_term = stats.n_samples as f64 / maxima.max_n_samples.max(1) as f64;
    let compute_term = stats.compute_capacity / maxima.max_capacity;
    let score = (cfg.w_data * data_term + cfg.w_compute * compute_term).clamp(0.0, 1.0);
    UtilityScore { client_id: stats.client_id, score }
}

/// The `min(k, |available|)` available clients with the highest scores,
/// ordered by (score desc, client_id asc). Empty `available` yields an
/// empty selection, which the orchestrator treats as a skipped round.
pub fn select_top_k(scores: &[UtilityScore], available: &[u64], k: u64) -> Vec<u64> {
    let mut candidates: Vec<&UtilityScore> = scores
        .iter()
        .filter(|s| available.contains(&s.client_id))
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.client_id.cmp(&b.client_id))
    });
    candidates
        .into_iter()
        .take(k as usize)
        .map(|s| s.client_id)
        .collect()
}

/// Next round's K. Over-budget rounds shrink K to `ceil(0.8 k)`;
/// otherwise stagnant accuracy grows it by one; otherwise K holds.
pub fn adapt_k(k_current: u64, last_round_time: f64, accuracy_gain: f64, cfg: &SelectionConfig) -> u64 {
    if let Some(budget) = cfg.time_budget_per_round {
        if last_round_time > budget {
            let shrunk = (0.8 * k_current as f64).ceil() as u64;
            return shrunk.max(cfg.k_min);
        }
    }
    if accuracy_gain < cfg.min_accuracy_gain {
        return (k_current + 1).min(cfg.k_max);
    }
    k_current
}
