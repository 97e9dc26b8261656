//! Per-node random streams.
//!
//! Every node owns an independent stream for every protocol step, derived by
//! hashing `(seed, node, step)`. Streams are SplitMix64 sequences, so a trial
//! is reproducible bit for bit on any platform and trials can run in parallel
//! without sharing generator state.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::key::NodeId;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Salts separating independent uses of the same `(seed, node, step)` triple.
pub(crate) mod salt {
    pub const CONTACT: u64 = 0x636f_6e74_6163_7473;
    pub const FAILURE: u64 = 0x6661_696c_7572_6573;
    pub const SCHEDULE: u64 = 0x7363_6865_6475_6c65;
    pub const WORKLOAD: u64 = 0x776f_726b_6c6f_6164;
}

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a `(seed, node, step, salt)` tuple, used as a stream seed.
#[inline]
pub fn stream_seed(seed: u64, node: u64, step: u64, salt: u64) -> u64 {
    let mut h = mix64(seed ^ salt);
    h = mix64(h.wrapping_add(GOLDEN).wrapping_add(node));
    mix64(h.wrapping_add(GOLDEN).wrapping_add(step))
}

/// Uniform real in `[0, 1)` from the top 53 bits of a word.
#[inline]
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A node's private stream for one protocol step.
#[derive(Clone, Debug)]
pub struct NodeRng {
    inner: SplitMix64,
}

impl NodeRng {
    pub fn new(seed: u64, node: NodeId, step: u64) -> Self {
        Self::from_state(stream_seed(seed, node as u64, step, salt::CONTACT))
    }

    pub fn from_state(state: u64) -> Self {
        NodeRng {
            inner: SplitMix64::seed_from_u64(state),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// One draw; true with probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Index in `[0, n)` from exactly one draw (multiply-shift reduction).
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// A uniformly random node among all `n`, the caller included.
#[inline]
pub fn uniform_peer(rng: &mut NodeRng, n: usize) -> NodeId {
    debug_assert!(n >= 1);
    rng.below(n as u64) as NodeId
}
