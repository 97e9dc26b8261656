//! Random node failures.
//!
//! Node `v` fails in round `i` with a probability `p(v, i) <= mu` that is
//! fixed before the trial starts. A failed node performs no push or pull in
//! that round.

use serde::{Deserialize, Serialize};

use super::rng::{salt, stream_seed, unit_f64};
use crate::error::{Error, Result};
use crate::key::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FailureModel {
    #[default]
    None,
    /// Every node fails with probability `mu` in every round.
    Uniform { mu: f64 },
    /// `p(v, i) = mu * u(v, i)` with `u` uniform in `[0, 1)`, derived from
    /// `seed`. Models heterogeneous, pre-determined failure rates.
    Scheduled { mu: f64, seed: u64 },
}

impl FailureModel {
    pub fn uniform(mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(FailureModel::Uniform { mu })
    }

    pub fn scheduled(mu: f64, seed: u64) -> Result<Self> {
        check_mu(mu)?;
        Ok(FailureModel::Scheduled { mu, seed })
    }

    /// Upper bound on every per-node, per-round failure probability.
    pub fn mu(&self) -> f64 {
        match *self {
            FailureModel::None => 0.0,
            FailureModel::Uniform { mu } | FailureModel::Scheduled { mu, .. } => mu,
        }
    }

    pub fn is_none(&self) -> bool {
        self.mu() == 0.0
    }

    /// `p(v, round)`.
    pub fn probability(&self, node: NodeId, round: u64) -> f64 {
        match *self {
            FailureModel::None => 0.0,
            FailureModel::Uniform { mu } => mu,
            FailureModel::Scheduled { mu, seed } => {
                mu * unit_f64(stream_seed(seed, node as u64, round, salt::SCHEDULE))
            }
        }
    }

    /// Whether `node` fails in `round` of the trial seeded with `trial_seed`.
    #[inline]
    pub fn fails(&self, trial_seed: u64, node: NodeId, round: u64) -> bool {
        if self.is_none() {
            return false;
        }
        let p = self.probability(node, round);
        unit_f64(stream_seed(trial_seed, node as u64, round, salt::FAILURE)) < p
    }

    pub fn validate(&self) -> Result<()> {
        check_mu(self.mu())
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if (0.0..1.0).contains(&mu) {
        Ok(())
    } else {
        Err(Error::invalid("mu", mu, "must lie in [0, 1)"))
    }
}

/// Failure bits of all `n` nodes for one round. Bit `v` is set with
/// probability `p(v, round)`, independently across nodes.
pub fn draw_failures(model: &FailureModel, round: u64, n: usize, seed: u64) -> Vec<bool> {
    (0..n as NodeId)
        .map(|v| model.fails(seed, v, round))
        .collect()
}
