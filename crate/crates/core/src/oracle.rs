//! Sort-based ground truth for ranks.

use crate::key::ValueKey;

/// Smallest rank `r` in `[1, n]` with `r >= phi * n`: the rank of the
/// `phi`-quantile.
pub fn target_rank(phi: f64, n: usize) -> usize {
    let r = (phi * n as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(n)
}

/// Inclusive rank window `[ceil((phi - eps) n), floor((phi + eps) n)]`,
/// clipped to `[1, n]`. May be empty (`lo > hi`) for tiny `n * eps`.
pub fn rank_window(phi: f64, eps: f64, n: usize) -> (usize, usize) {
    let nf = n as f64;
    let lo = ((phi - eps) * nf - 1e-9).ceil().max(1.0) as usize;
    let hi = ((phi + eps) * nf + 1e-9).floor().min(nf).max(0.0) as usize;
    (lo, hi)
}

/// Counts of nodes below, inside and above a rank window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Lmh {
    pub low: usize,
    pub mid: usize,
    pub high: usize,
}

impl Lmh {
    pub fn total(&self) -> usize {
        self.low + self.mid + self.high
    }
}

#[derive(Clone, Debug)]
pub struct RankOracle {
    sorted: Vec<ValueKey>,
}

impl RankOracle {
    pub fn new(keys: &[ValueKey]) -> Self {
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        RankOracle { sorted }
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted(&self) -> &[ValueKey] {
        &self.sorted
    }

    /// Number of keys `<= key`.
    pub fn rank(&self, key: &ValueKey) -> usize {
        self.sorted.partition_point(|k| k <= key)
    }

    /// Key of 1-based rank `r`.
    pub fn key_at(&self, r: usize) -> ValueKey {
        self.sorted[r - 1]
    }

    pub fn quantile_key(&self, phi: f64) -> ValueKey {
        self.key_at(target_rank(phi, self.n()))
    }

    /// Classifies `values` against the rank window `[lo, hi]` using two key
    /// comparisons per value.
    pub fn classify(&self, values: &[ValueKey], (lo, hi): (usize, usize)) -> Lmh {
        let n = self.n();
        let below = if lo == 0 { None } else if lo > n { Some(ValueKey::INFINITY) } else { Some(self.key_at(lo)) };
        let above = if hi == 0 { Some(ValueKey::NEG_INFINITY) } else if hi >= n { None } else { Some(self.key_at(hi)) };
        let mut out = Lmh::default();
        for v in values {
            if below.is_some_and(|b| *v < b) {
                out.low += 1;
            } else if above.is_some_and(|a| *v > a) {
                out.high += 1;
            } else {
                out.mid += 1;
            }
        }
        out
    }
}
