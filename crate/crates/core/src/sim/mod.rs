//! Deterministic synchronous gossip simulation.

mod engine;
mod failure;
mod rng;

pub use engine::{ContactFn, Contacts, Network, NodeCtx, SimConfig, DEFAULT_MAX_ROUNDS};
pub use failure::{draw_failures, FailureModel};
pub use rng::{mix64, stream_seed, uniform_peer, unit_f64, NodeRng};

pub(crate) use rng::salt;

/// Raw values for a trial: `n` integers drawn uniformly from `[0, range)`,
/// reproducible from `seed`. Collisions are allowed; keys break ties.
pub fn random_values(n: usize, range: u64, seed: u64) -> Vec<i64> {
    (0..n as u64)
        .map(|v| {
            let mut rng = NodeRng::from_state(stream_seed(seed, v, 0, salt::WORKLOAD));
            rng.below(range.max(1)) as i64
        })
        .collect()
}
