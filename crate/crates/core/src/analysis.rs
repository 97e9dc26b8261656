//! Closed-form recurrences and bounds.
//!
//! These drive the tournament protocols (their schedules) and serve as the
//! reference values in tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedules running longer than this are rejected.
pub const MAX_SCHEDULE_LEN: usize = 200;

/// Default number of samples for the final median vote.
pub const DEFAULT_FINAL_SAMPLES: usize = 30;

/// Which tail the quantile-shifting phase shrinks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// The high tail is larger; nodes keep the minimum of two samples.
    ShrinkHigh,
    /// The low tail is larger; nodes keep the maximum of two samples.
    ShrinkLow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase1Schedule {
    pub phi: f64,
    pub eps: f64,
    pub direction: Direction,
    /// Expected size of the shrinking tail after each iteration, `h[0]` first.
    pub h: Vec<f64>,
    /// Probability of running the two-sample tournament in each iteration.
    pub delta: Vec<f64>,
    pub t: usize,
    /// Stopping threshold `1/2 - eps`.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Schedule {
    pub eps: f64,
    pub n: usize,
    /// Expected tail fraction after each iteration, `l[0] = 1/2 - eps`.
    pub l: Vec<f64>,
    pub t: usize,
    /// Stopping threshold `n^(-1/3)`.
    pub threshold: f64,
    /// Samples in the final median vote.
    pub final_samples: usize,
}

/// Schedule of the quantile-shifting phase for target `phi` and accuracy
/// `eps`. The larger tail outside `[phi - eps, phi + eps]` is squared each
/// iteration until it drops to `1/2 - eps`; the last iteration is truncated
/// so the expected tail lands exactly on the threshold.
pub fn two_tournament_schedule(phi: f64, eps: f64) -> Result<Phase1Schedule> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::invalid("phi", phi, "must lie in [0, 1]"));
    }
    if !(eps > 0.0 && eps <= 0.125) {
        return Err(Error::invalid("eps", eps, "must lie in (0, 1/8]"));
    }
    let high0 = 1.0 - (phi + eps);
    let low0 = phi - eps;
    let (direction, start) = if high0 >= low0 {
        (Direction::ShrinkHigh, high0)
    } else {
        (Direction::ShrinkLow, low0)
    };
    let threshold = 0.5 - eps;
    let mut h = vec![start];
    let mut delta = Vec::new();
    while *h.last().unwrap() > threshold {
        if delta.len() >= MAX_SCHEDULE_LEN {
            return Err(Error::ScheduleTooLong(MAX_SCHEDULE_LEN));
        }
        let cur = *h.last().unwrap();
        let next = cur * cur;
        delta.push(((cur - threshold) / (cur - next)).min(1.0));
        h.push(next);
    }
    Ok(Phase1Schedule {
        phi,
        eps,
        direction,
        t: delta.len(),
        h,
        delta,
        threshold,
    })
}

/// One median-of-three step applied to a tail fraction.
pub fn median_map(p: f64) -> f64 {
    3.0 * p * p - 2.0 * p * p * p
}

/// Schedule of the median phase: iterate `l -> 3l^2 - 2l^3` from
/// `1/2 - eps` until `l <= n^(-1/3)`.
pub fn three_tournament_schedule(eps: f64, n: usize) -> Result<Phase2Schedule> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::invalid("eps", eps, "must lie in (0, 1/2)"));
    }
    if n < 2 {
        return Err(Error::invalid("n", n, "must be at least 2"));
    }
    let threshold = (n as f64).powf(-1.0 / 3.0);
    let mut l = vec![0.5 - eps];
    while *l.last().unwrap() > threshold {
        if l.len() > MAX_SCHEDULE_LEN {
            return Err(Error::ScheduleTooLong(MAX_SCHEDULE_LEN));
        }
        let next = median_map(*l.last().unwrap());
        l.push(next);
    }
    Ok(Phase2Schedule {
        eps,
        n,
        t: l.len() - 1,
        l,
        threshold,
        final_samples: DEFAULT_FINAL_SAMPLES,
    })
}

/// Iteration bound of the shifting phase: `log_{7/4}(4/eps) + 2`.
pub fn shift_bound(eps: f64) -> f64 {
    (4.0 / eps).ln() / 1.75f64.ln() + 2.0
}

/// Iteration bound of the median phase:
/// `log_{11/8}(1/(4 eps)) + log2(log4(n))`.
pub fn tournament_bound(eps: f64, n: usize) -> f64 {
    let log4n = (n as f64).ln() / 4f64.ln();
    (1.0 / (4.0 * eps)).ln() / (11.0f64 / 8.0).ln() + log4n.log2()
}

fn check_pow2(name: &'static str, x: u64) -> Result<()> {
    if x == 0 || !x.is_power_of_two() {
        return Err(Error::invalid(name, x, "must be a power of two"));
    }
    Ok(())
}

/// Worst-case rank error of a buffer of capacity `k` that summarizes
/// `n_prime` samples through pairwise merges: `(n'/(2k)) log2(n'/k)`.
pub fn compaction_error_bound(n_prime: u64, k: u64) -> Result<u64> {
    check_pow2("n_prime", n_prime)?;
    check_pow2("k", k)?;
    if n_prime < k {
        return Err(Error::invalid("n_prime", n_prime, "must be at least k"));
    }
    let ratio = n_prime / k;
    Ok(ratio / 2 * ratio.trailing_zeros() as u64)
}

/// Default constant in [`choose_buffer_size`].
pub const DEFAULT_BUFFER_CONSTANT: f64 = 4.0;

/// Compacted buffer size for accuracy `eps` at population `n`: the smallest
/// power of two `>= c (1/eps)(log2 log2 n + log2(1/eps))`, at least 2.
pub fn choose_buffer_size(eps: f64, n: usize) -> Result<u64> {
    choose_buffer_size_with(eps, n, DEFAULT_BUFFER_CONSTANT)
}

pub fn choose_buffer_size_with(eps: f64, n: usize, c: f64) -> Result<u64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid("eps", eps, "must lie in (0, 1]"));
    }
    if n < 4 {
        return Err(Error::invalid("n", n, "must be at least 4"));
    }
    let size = c / eps * ((n as f64).log2().log2() + (1.0 / eps).log2());
    Ok((size.ceil().max(2.0) as u64).next_power_of_two())
}
