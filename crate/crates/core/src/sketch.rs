//! Sampling-based quantile estimates and the compacted buffer.
//!
//! A [`CompactedBuffer`] is a sorted multiset in which every element stands
//! for `weight` samples. Merging two full buffers keeps every second
//! element and doubles the weight, so the buffer never exceeds its capacity
//! while the rank error stays bounded deterministically.

use crate::analysis::{choose_buffer_size_with, compaction_error_bound};
use crate::error::{Error, Result};
use crate::key::{NodeId, ValueKey};
use crate::sim::{Network, NodeRng};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactedBuffer<K = ValueKey> {
    elements: Vec<K>,
    weight: u64,
    capacity: usize,
}

/// Keeps the 2nd, 4th, ... element of sorted `elements` if there are more
/// than `k` of them. Returns whether anything was dropped.
pub fn compact<K: Copy>(elements: &mut Vec<K>, k: usize) -> bool {
    if elements.len() <= k {
        return false;
    }
    debug_assert!(elements.len() <= 2 * k);
    let kept: Vec<K> = elements.iter().skip(1).step_by(2).copied().collect();
    *elements = kept;
    true
}

fn merge_sorted<K: Ord + Copy>(a: &[K], b: &[K]) -> Vec<K> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl<K: Ord + Copy> CompactedBuffer<K> {
    pub fn new(capacity: usize) -> Self {
        CompactedBuffer {
            elements: Vec::new(),
            weight: 1,
            capacity,
        }
    }

    pub fn singleton(x: K, capacity: usize) -> Self {
        CompactedBuffer {
            elements: vec![x],
            weight: 1,
            capacity,
        }
    }

    /// A buffer that never compacts.
    pub fn unbounded(elements: Vec<K>) -> Self {
        let mut elements = elements;
        elements.sort_unstable();
        CompactedBuffer {
            elements,
            weight: 1,
            capacity: usize::MAX,
        }
    }

    pub fn elements(&self) -> &[K] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of samples the buffer stands for.
    pub fn weighted_size(&self) -> u64 {
        self.weight * self.elements.len() as u64
    }

    /// Union of two equal-weight buffers, compacted once if it exceeds the
    /// capacity.
    pub fn merged(a: &Self, b: &Self) -> Result<Self> {
        if a.weight != b.weight {
            return Err(Error::WeightMismatch(a.weight, b.weight));
        }
        let mut elements = merge_sorted(&a.elements, &b.elements);
        let weight = if compact(&mut elements, a.capacity) { a.weight * 2 } else { a.weight };
        Ok(CompactedBuffer {
            elements,
            weight,
            capacity: a.capacity,
        })
    }

    /// `weight * |{e : e <= z}|`.
    pub fn rank_query(&self, z: &K) -> Result<u64> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(self.weight * self.elements.partition_point(|e| e <= z) as u64)
    }

    /// Fraction of represented samples `<= z`.
    pub fn quantile_query(&self, z: &K) -> Result<f64> {
        Ok(self.rank_query(z)? as f64 / self.weighted_size() as f64)
    }

    /// The element at sorted position `ceil(phi * len)`, at least the first.
    pub fn quantile_element(&self, phi: f64) -> Result<K> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.len();
        let pos = ((phi * len as f64 - 1e-9).ceil() as usize).clamp(1, len);
        Ok(self.elements[pos - 1])
    }
}

/// Merges two equal-weight buffers.
pub fn doubling_update<K: Ord + Copy>(a: CompactedBuffer<K>, b: CompactedBuffer<K>) -> Result<CompactedBuffer<K>> {
    CompactedBuffer::merged(&a, &b)
}

const KEY_BYTES: usize = 20;

impl CompactedBuffer<ValueKey> {
    /// Little-endian encoding: `u64` length, each key as `i64` value, `u32`
    /// origin and `u64` copy, then `u64` weight and `u64` capacity.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + KEY_BYTES * self.len());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for k in &self.elements {
            out.extend_from_slice(&k.value.to_le_bytes());
            out.extend_from_slice(&k.origin.to_le_bytes());
            out.extend_from_slice(&k.copy.to_le_bytes());
        }
        out.extend_from_slice(&self.weight.to_le_bytes());
        out.extend_from_slice(&(self.capacity as u64).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 8]> {
            bytes
                .get(at..at + 8)
                .and_then(|s| s.try_into().ok())
                .ok_or(Error::Decode("truncated"))
        };
        let len = u64::from_le_bytes(word(0)?) as usize;
        let body = len.checked_mul(KEY_BYTES).ok_or(Error::Decode("length overflow"))?;
        if bytes.len() != 8 + body + 16 {
            return Err(Error::Decode("length does not match payload"));
        }
        let mut elements = Vec::with_capacity(len);
        for i in 0..len {
            let at = 8 + i * KEY_BYTES;
            let value = i64::from_le_bytes(word(at)?);
            let origin = u32::from_le_bytes(bytes[at + 8..at + 12].try_into().unwrap());
            let copy = u64::from_le_bytes(word(at + 12)?);
            elements.push(ValueKey { value, origin, copy });
        }
        if elements.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Decode("keys not sorted"));
        }
        let weight = u64::from_le_bytes(word(8 + body)?);
        let capacity = u64::from_le_bytes(word(16 + body)?);
        if !weight.is_power_of_two() {
            return Err(Error::Decode("weight not a power of two"));
        }
        if capacity == 0 || (len as u64) > capacity {
            return Err(Error::Decode("length exceeds capacity"));
        }
        Ok(CompactedBuffer {
            elements,
            weight,
            capacity: usize::try_from(capacity).unwrap_or(usize::MAX),
        })
    }
}

/// Runs the doubling schedule on a complete binary merge tree over a random
/// permutation of `data`, once without compaction and once with capacity
/// `k`, and returns the largest rank difference over all `z` in `data`.
/// Errors if it exceeds the deterministic bound.
pub fn compaction_error_check<K: Ord + Copy>(n_prime: u64, k: u64, data: &[K], rng: &mut NodeRng) -> Result<u64> {
    let bound = compaction_error_bound(n_prime, k)?;
    if data.len() as u64 != n_prime {
        return Err(Error::invalid("data", data.len(), "must hold n_prime items"));
    }
    let mut items = data.to_vec();
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
    let mut level: Vec<CompactedBuffer<K>> = items.iter().map(|&x| CompactedBuffer::singleton(x, k as usize)).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| CompactedBuffer::merged(&p[0], &p[1]))
            .collect::<Result<_>>()?;
    }
    let compacted = &level[0];
    debug_assert_eq!(compacted.weighted_size(), n_prime);
    let mut exact = items;
    exact.sort_unstable();
    let mut worst = 0;
    for z in &exact {
        let r = exact.partition_point(|e| e <= z) as u64;
        worst = worst.max(r.abs_diff(compacted.rank_query(z)?));
    }
    if worst > bound {
        return Err(Error::Invariant(format!("rank error {worst} exceeds bound {bound}")));
    }
    Ok(worst)
}

pub const DEFAULT_SAMPLE_CONSTANT: f64 = 8.0;

/// Sample size `ceil(c ln n / eps^2)`.
pub fn sample_size(n: usize, eps: f64, c: f64) -> u64 {
    (c * (n.max(2) as f64).ln() / (eps * eps)).ceil() as u64
}

/// Every node pulls `ceil(c ln n / eps^2)` values, one per round, and
/// outputs the sample element at sorted position `ceil(phi s)`. A failed
/// pull contributes nothing.
pub fn uniform_sample_quantile(net: &mut Network, keys: &[ValueKey], phi: f64, eps: f64, c: f64) -> Result<Vec<ValueKey>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", eps, "must lie in (0, 1)"));
    }
    let s = sample_size(net.n(), eps, c);
    let rounds = u32::try_from(s).map_err(|_| Error::invalid("sample size", s, "too large"))?;
    let mut buf = Vec::with_capacity(s as usize);
    net.run_iteration(keys, rounds, |ctx, prev| {
        buf.clear();
        for _ in 0..s {
            if let Some(p) = ctx.pull() {
                buf.push(prev[p as usize]);
            }
        }
        if buf.is_empty() {
            return prev[ctx.node() as usize];
        }
        let pos = ((phi * buf.len() as f64 - 1e-9).ceil() as usize).clamp(1, buf.len());
        *buf.select_nth_unstable(pos - 1).1
    })
}

/// Degenerate sampling in which every node sees every value once: each
/// node outputs the exact `phi`-quantile key.
pub fn exhaustive_sample_quantile(keys: &[ValueKey], phi: f64) -> Vec<ValueKey> {
    let buf = CompactedBuffer::unbounded(keys.to_vec());
    let q = buf.quantile_element(phi).unwrap_or(ValueKey::INFINITY);
    vec![q; keys.len()]
}

/// Doubling schedule over `T = log2(n_prime) + 1` rounds: one initial pull,
/// then every node merges the buffer of one random peer into its own each
/// round. Buffers have capacity `k`. A failed pull leaves the buffer as is
/// and is merged with itself, so weights stay aligned.
pub fn doubling_sketch<K: Ord + Copy>(net: &mut Network, items: &[K], n_prime: u64, k: usize) -> Result<Vec<CompactedBuffer<K>>> {
    if !n_prime.is_power_of_two() {
        return Err(Error::invalid("n_prime", n_prime, "must be a power of two"));
    }
    if !k.is_power_of_two() {
        return Err(Error::invalid("k", k, "must be a power of two"));
    }
    let mut buffers: Vec<CompactedBuffer<K>> = net.run_iteration(items, 1, |ctx, prev| {
        let own = prev[ctx.node() as usize];
        CompactedBuffer::singleton(ctx.pull().map_or(own, |p| prev[p as usize]), k)
    })?;
    let mut err = None;
    for _ in 0..n_prime.trailing_zeros() {
        buffers = net.run_iteration(&buffers, 1, |ctx, prev| {
            let v = ctx.node() as usize;
            let peer = ctx.pull().map_or(v, |p| p as usize);
            CompactedBuffer::merged(&prev[v], &prev[peer]).unwrap_or_else(|e| {
                err.get_or_insert(e);
                prev[v].clone()
            })
        })?;
        if let Some(e) = err.take() {
            return Err(e);
        }
    }
    Ok(buffers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchRun<K = ValueKey> {
    pub outputs: Vec<K>,
    pub k: usize,
    pub n_prime: u64,
    pub rounds: u64,
}

/// End-to-end sketch estimate: doubling with compaction, buffer size from
/// [`choose_buffer_size_with`] at `eps / 2`, and `n' = ceil(c ln n / eps^2)`
/// rounded up to a power of two.
pub fn sketch_quantile<K: Ord + Copy>(
    net: &mut Network,
    keys: &[K],
    phi: f64,
    eps: f64,
    sample_constant: f64,
    buffer_constant: f64,
) -> Result<SketchRun<K>> {
    let n = net.n();
    let k = choose_buffer_size_with(eps / 2.0, n.max(4), buffer_constant)? as usize;
    let n_prime = sample_size(n, eps, sample_constant).next_power_of_two();
    let start = net.round();
    let buffers = doubling_sketch(net, keys, n_prime, k)?;
    let outputs = buffers.iter().map(|b| b.quantile_element(phi)).collect::<Result<_>>()?;
    Ok(SketchRun {
        outputs,
        k,
        n_prime,
        rounds: net.round() - start,
    })
}

/// Node-indexed ranks `0..n` in random order, used as compact stand-ins for
/// keys in large sketch simulations.
pub fn shuffled_ranks(n: usize, rng: &mut NodeRng) -> Vec<u32> {
    let mut r: Vec<u32> = (0..n as NodeId).collect();
    for i in (1..n).rev() {
        r.swap(i, rng.below(i as u64 + 1) as usize);
    }
    r
}
