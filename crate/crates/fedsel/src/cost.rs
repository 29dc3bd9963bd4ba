//! The simulated-time cost model.
//!
//! "Training time" in this harness is deterministic simulated seconds, not
//! wall clock: each local step costs `base_step_cost / capacity`, and
//! checkpoint saves, recoveries, and the per-round aggregation add flat
//! costs. That makes timing results hardware-independent and exactly
//! reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Seconds per local step at capacity 1.0.
    pub base_step_cost: f64,
    /// Seconds per round for server-side aggregation.
    pub aggregation_cost: f64,
    /// Seconds per checkpoint save.
    pub checkpoint_cost: f64,
    /// Seconds per checkpoint restore.
    pub recovery_cost: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_step_cost", self.base_step_cost),
            ("aggregation_cost", self.aggregation_cost),
            ("checkpoint_cost", self.checkpoint_cost),
            ("recovery_cost", self.recovery_cost),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "cost_model.{name} must be a non-negative finite number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            base_step_cost: 0.001,
            aggregation_cost: 0.01,
            checkpoint_cost: 0.002,
            recovery_cost: 0.005,
        }
    }
}

/// Simulated seconds one client spends in a round:
/// `steps * base/capacity + saves * checkpoint + recoveries * recovery`.
/// `steps` counts every executed step, replays included.
pub fn client_time(
    steps: u64,
    saves: u64,
    recoveries: u64,
    capacity: f64,
    cm: &CostModel,
) -> f64 {
    steps as f64 * cm.base_step_cost / capacity
        + saves as f64 * cm.checkpoint_cost
        + recoveries as f64 * cm.recovery_cost
}
