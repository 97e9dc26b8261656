//! Min/max dissemination and push-sum counting.

use crate::error::{Error, Result};
use crate::key::{NodeId, ValueKey};
use crate::sim::Network;

pub const DEFAULT_SPREAD_CONSTANT: f64 = 4.0;
pub const DEFAULT_PUSH_SUM_CONSTANT: f64 = 4.0;
/// Extra push-sum rounds on top of `c log2 n`.
pub const PUSH_SUM_MARGIN: u64 = 30;

fn ceil_log2(n: usize) -> u64 {
    (n.max(2) as f64).log2().ceil() as u64
}

/// Slowdown factor applied to round budgets when nodes fail with
/// probability up to `mu`.
pub fn failure_slowdown(mu: f64) -> u64 {
    (1.0 / (1.0 - mu)).ceil() as u64
}

/// Rounds given to [`spread_min_max`].
pub fn spread_rounds(n: usize, c: f64, mu: f64) -> u64 {
    (c * ceil_log2(n) as f64).ceil() as u64 * failure_slowdown(mu)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadOutcome {
    pub min: Vec<ValueKey>,
    pub max: Vec<ValueKey>,
    /// First round after which every node held the global min and max.
    pub converged_at: Option<u64>,
    pub rounds: u64,
}

impl SpreadOutcome {
    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    /// The agreed `(min, max)`, or an error if some node disagrees.
    pub fn agreed(&self) -> Result<(ValueKey, ValueKey)> {
        match self.converged_at {
            Some(_) => Ok((self.min[0], self.max[0])),
            None => Err(Error::SpreadNotConverged { rounds: self.rounds }),
        }
    }
}

/// Push-pull spreading of the minimum of `lows` and the maximum of `highs`.
/// Each round a non-failed node exchanges its current min and max with one
/// random peer in both directions. Runs `spread_rounds` rounds.
pub fn spread_min_max(net: &mut Network, lows: &[ValueKey], highs: &[ValueKey], c: f64) -> Result<SpreadOutcome> {
    let n = net.n();
    if lows.len() != n || highs.len() != n {
        return Err(Error::invalid("lows/highs", lows.len(), "must hold one key per node"));
    }
    let rounds = spread_rounds(n, c, net.failure().mu());
    net.check_budget(rounds)?;
    let gmin = *lows.iter().min().unwrap();
    let gmax = *highs.iter().max().unwrap();
    let mut min = lows.to_vec();
    let mut max = highs.to_vec();
    let done = |min: &[ValueKey], max: &[ValueKey]| min.iter().all(|&x| x == gmin) && max.iter().all(|&x| x == gmax);
    let mut converged_at = done(&min, &max).then_some(0);
    let mut prev_min = min.clone();
    let mut prev_max = max.clone();
    for r in 0..rounds {
        if converged_at.is_some() {
            // Nothing changes once every node holds the extremes; only the
            // message count of each remaining round is still needed.
            let (seed, round) = (net.seed(), net.round());
            let live = (0..n as NodeId).filter(|&v| !net.failure().fails(seed, v, round)).count();
            net.finish_step(1, 2 * live as u64)?;
            continue;
        }
        prev_min.copy_from_slice(&min);
        prev_max.copy_from_slice(&max);
        let mut messages = 0;
        for v in 0..n as NodeId {
            let mut ctx = net.ctx(v);
            if let Some(u) = ctx.pull() {
                let (v, u) = (v as usize, u as usize);
                min[v] = min[v].min(prev_min[u]);
                max[v] = max[v].max(prev_max[u]);
                min[u] = min[u].min(prev_min[v]);
                max[u] = max[u].max(prev_max[v]);
                messages += 2;
            }
        }
        net.finish_step(1, messages)?;
        if done(&min, &max) {
            converged_at = Some(r + 1);
        }
    }
    Ok(SpreadOutcome {
        min,
        max,
        converged_at,
        rounds,
    })
}

/// Push-sum state: every node holds a sum share `s` and a weight share `w`.
#[derive(Clone, Debug)]
pub struct PushSum {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    scratch_s: Vec<f64>,
    scratch_w: Vec<f64>,
}

impl PushSum {
    pub fn new(bits: &[bool]) -> Self {
        PushSum {
            s: bits.iter().map(|&b| b as u8 as f64).collect(),
            w: vec![1.0; bits.len()],
            scratch_s: Vec::new(),
            scratch_w: Vec::new(),
        }
    }

    /// One round: every node halves its shares and pushes one half to a
    /// random peer. A node that fails keeps both halves.
    pub fn round(&mut self, net: &mut Network) -> Result<()> {
        let n = self.s.len();
        let (mut s, mut w) = (std::mem::take(&mut self.scratch_s), std::mem::take(&mut self.scratch_w));
        s.clear();
        s.resize(n, 0.0);
        w.clear();
        w.resize(n, 0.0);
        let mut messages = 0;
        for v in 0..n {
            let mut ctx = net.ctx(v as NodeId);
            let (hs, hw) = (self.s[v] / 2.0, self.w[v] / 2.0);
            s[v] += hs;
            w[v] += hw;
            let to = match ctx.push() {
                Some(u) => {
                    messages += 1;
                    u as usize
                }
                None => v,
            };
            s[to] += hs;
            w[to] += hw;
        }
        self.scratch_s = std::mem::replace(&mut self.s, s);
        self.scratch_w = std::mem::replace(&mut self.w, w);
        net.finish_step(1, messages)
    }

    /// `(sum of s, sum of w)`.
    pub fn mass(&self) -> (f64, f64) {
        (self.s.iter().sum(), self.w.iter().sum())
    }

    /// Per-node estimates of the global sum, `n s / w`.
    pub fn estimates(&self) -> Vec<f64> {
        let n = self.s.len() as f64;
        self.s.iter().zip(&self.w).map(|(s, w)| n * s / w).collect()
    }
}

pub fn push_sum_rounds(n: usize, c: f64) -> u64 {
    (c * (n.max(2) as f64).log2()).ceil() as u64 + PUSH_SUM_MARGIN
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountOutcome {
    /// Rounded estimate at every node.
    pub estimates: Vec<u64>,
    /// Some estimate was within 1/4 of a half-integer, or nodes disagree.
    pub flagged: bool,
    pub rounds: u64,
}

impl CountOutcome {
    /// The agreed count, if unflagged.
    pub fn count(&self) -> Option<u64> {
        (!self.flagged).then(|| self.estimates[0])
    }
}

/// Push-sum count of set bits over `rounds` rounds.
pub fn push_sum_count_rounds(net: &mut Network, bits: &[bool], rounds: u64) -> Result<CountOutcome> {
    if bits.len() != net.n() {
        return Err(Error::invalid("bits", bits.len(), "must hold one bit per node"));
    }
    net.check_budget(rounds)?;
    let mut ps = PushSum::new(bits);
    for _ in 0..rounds {
        ps.round(net)?;
    }
    let raw = ps.estimates();
    let mut flagged = false;
    let estimates: Vec<u64> = raw
        .iter()
        .map(|&x| {
            let r = x.round();
            flagged |= !r.is_finite() || (x - r).abs() >= 0.25;
            r.max(0.0) as u64
        })
        .collect();
    flagged |= estimates.iter().any(|&e| e != estimates[0]);
    Ok(CountOutcome {
        estimates,
        flagged,
        rounds,
    })
}

/// Push-sum count with the default `ceil(c log2 n) + 30` rounds.
pub fn push_sum_count(net: &mut Network, bits: &[bool], c: f64) -> Result<CountOutcome> {
    let rounds = push_sum_rounds(net.n(), c) * failure_slowdown(net.failure().mu());
    push_sum_count_rounds(net, bits, rounds)
}

/// Exact count: retries with doubled rounds while the result is flagged.
pub fn exact_count(net: &mut Network, bits: &[bool], c: f64, retries: usize) -> Result<u64> {
    let mut rounds = push_sum_rounds(net.n(), c) * failure_slowdown(net.failure().mu());
    for _ in 0..=retries {
        if let Some(k) = push_sum_count_rounds(net, bits, rounds)?.count() {
            return Ok(k);
        }
        rounds *= 2;
    }
    Err(Error::CountAmbiguous { rounds: rounds / 2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{FailureModel, NodeRng, SimConfig};
    use proptest::prelude::*;

    fn net(n: usize, seed: u64) -> Network {
        Network::new(SimConfig::new(n, seed)).unwrap()
    }

    fn random_keys(n: usize, seed: u64) -> Vec<ValueKey> {
        ValueKey::initial(&crate::sim::random_values(n, 1 << 40, seed))
    }

    #[test]
    fn equal_values_spread_immediately() {
        let keys = vec![ValueKey::new(5, 0); 64];
        let out = spread_min_max(&mut net(64, 1), &keys, &keys, 4.0).unwrap();
        assert_eq!(out.converged_at, Some(0));
        assert_eq!(out.agreed().unwrap(), (keys[0], keys[0]));
    }

    #[test]
    fn spread_converges_at_1024() {
        for seed in 0..100 {
            let keys = random_keys(1024, seed);
            let mut net = net(1024, seed);
            let out = spread_min_max(&mut net, &keys, &keys, 4.0).unwrap();
            assert_eq!(out.rounds, 40);
            assert!(out.converged(), "seed {seed}");
            let (lo, hi) = out.agreed().unwrap();
            assert_eq!(lo, *keys.iter().min().unwrap());
            assert_eq!(hi, *keys.iter().max().unwrap());
        }
    }

    #[test]
    fn spread_under_failures() {
        let mut ok = 0;
        for seed in 0..100 {
            let keys = random_keys(1024, seed);
            let cfg = SimConfig::new(1024, seed).with_failure(FailureModel::uniform(0.5).unwrap());
            let out = spread_min_max(&mut Network::new(cfg).unwrap(), &keys, &keys, 4.0).unwrap();
            assert_eq!(out.rounds, 80);
            ok += out.converged() as usize;
        }
        assert!(ok >= 99, "{ok}");
    }

    #[test]
    fn all_ones_count_is_n() {
        let out = push_sum_count(&mut net(300, 2), &[true; 300], 4.0).unwrap();
        assert_eq!(out.count(), Some(300));
    }

    #[test]
    fn zero_count() {
        let out = push_sum_count(&mut net(300, 2), &[false; 300], 4.0).unwrap();
        assert_eq!(out.count(), Some(0));
    }

    #[test]
    fn mass_conserved_every_round() {
        let n = 4096;
        let mut rng = NodeRng::from_state(3);
        let bits: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.375)).collect();
        let total = bits.iter().filter(|&&b| b).count() as f64;
        let mut net = net(n, 3);
        let mut ps = PushSum::new(&bits);
        for _ in 0..60 {
            ps.round(&mut net).unwrap();
            let (s, w) = ps.mass();
            assert!((s - total).abs() <= 1e-9 * total);
            assert!((w - n as f64).abs() <= 1e-9 * n as f64);
            assert!(ps.w.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn failures_keep_mass() {
        let n = 1000;
        let bits: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let cfg = SimConfig::new(n, 5).with_failure(FailureModel::uniform(0.5).unwrap());
        let mut net = Network::new(cfg).unwrap();
        let mut ps = PushSum::new(&bits);
        for _ in 0..20 {
            ps.round(&mut net).unwrap();
        }
        assert!((ps.mass().0 - 334.0).abs() < 1e-9);
        assert_eq!(exact_count(&mut net, &bits, 4.0, 2).unwrap(), 334);
    }

    #[test]
    fn too_few_rounds_are_flagged() {
        let bits: Vec<bool> = (0..2000).map(|i| i % 2 == 0).collect();
        let out = push_sum_count_rounds(&mut net(2000, 1), &bits, 2).unwrap();
        assert!(out.flagged);
        assert_eq!(out.count(), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn spread_is_monotone(n in 2usize..300, seed in any::<u64>()) {
            let keys = random_keys(n, seed);
            let mut net = net(n, seed);
            let out = spread_min_max(&mut net, &keys, &keys, 1.0).unwrap();
            for v in 0..n {
                prop_assert!(out.min[v] <= keys[v]);
                prop_assert!(out.max[v] >= keys[v]);
            }
        }

        #[test]
        fn count_matches_popcount(n in 2usize..500, seed in any::<u64>(), p in 0.0f64..1.0) {
            let mut rng = NodeRng::from_state(seed);
            let bits: Vec<bool> = (0..n).map(|_| rng.bernoulli(p)).collect();
            let out = push_sum_count(&mut net(n, seed), &bits, 4.0).unwrap();
            if let Some(c) = out.count() {
                prop_assert_eq!(c as usize, bits.iter().filter(|&&b| b).count());
            }
        }
    }
}
