//! Tournament protocols for approximate quantiles.
//!
//! Phase I repeatedly replaces each value by the min (or max) of two sampled
//! values, moving the target quantile to the median. Phase II repeatedly
//! takes the median of three samples, concentrating all values near the
//! median. A final vote over `K` samples produces each node's output.
//!
//! The robust variants pull a batch of peers per iteration and only use
//! pulls that succeeded and hit a node that was good at the end of the
//! previous iteration.

use serde::{Deserialize, Serialize};

use crate::analysis::{three_tournament_schedule, two_tournament_schedule, Direction, DEFAULT_FINAL_SAMPLES};
use crate::error::{Error, Result};
use crate::key::{median3, NodeId, ValueKey};
use crate::oracle::{rank_window, RankOracle};
use crate::report::TrialReport;
use crate::sim::{Network, NodeCtx, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TournamentParams {
    /// Phase II runs at accuracy `eps / phase2_divisor`.
    pub phase2_divisor: f64,
    /// Samples in the final vote, rounded up to odd.
    pub final_samples: usize,
    /// Constant `c` in the robust batch size `(c/(1-mu)) log2(c/(1-mu)) + 1`.
    pub batch_constant: f64,
}

impl Default for TournamentParams {
    fn default() -> Self {
        TournamentParams {
            phase2_divisor: 4.0,
            final_samples: DEFAULT_FINAL_SAMPLES,
            batch_constant: 4.0,
        }
    }
}

impl TournamentParams {
    pub fn odd_samples(&self) -> usize {
        let k = self.final_samples.max(1);
        k | 1
    }
}

/// Point in a run at which the observer is called.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Initial,
    Phase1(usize),
    Phase2(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Plain,
    Robust { t_extra: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRun {
    pub outputs: Vec<Option<ValueKey>>,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    /// Good nodes after each robust iteration, including the final vote.
    pub good_counts: Vec<usize>,
}

#[inline]
fn extreme(direction: Direction, a: ValueKey, b: ValueKey) -> ValueKey {
    match direction {
        Direction::ShrinkHigh => a.min(b),
        Direction::ShrinkLow => a.max(b),
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(Error::invalid("delta", delta, "must lie in [0, 1]"))
    }
}

/// One shifting iteration. With probability `delta` a node keeps the
/// extreme of two pulled values, otherwise it copies one pulled value. A
/// failed pull yields the node's own value. Costs 2 rounds.
pub fn phase1_iteration(
    net: &mut Network,
    values: &[ValueKey],
    delta: f64,
    direction: Direction,
) -> Result<Vec<ValueKey>> {
    check_delta(delta)?;
    net.run_iteration(values, 2, |ctx, prev| {
        let own = prev[ctx.node() as usize];
        let get = |p: Option<NodeId>| p.map_or(own, |p| prev[p as usize]);
        if ctx.rng().bernoulli(delta) {
            let a = get(ctx.pull());
            let b = get(ctx.pull());
            extreme(direction, a, b)
        } else {
            let a = get(ctx.pull());
            ctx.skip();
            a
        }
    })
}

/// One median-of-three iteration. Costs 3 rounds.
pub fn phase2_iteration(net: &mut Network, values: &[ValueKey]) -> Result<Vec<ValueKey>> {
    net.run_iteration(values, 3, |ctx, prev| {
        let own = prev[ctx.node() as usize];
        let get = |p: Option<NodeId>| p.map_or(own, |p| prev[p as usize]);
        let a = get(ctx.pull());
        let b = get(ctx.pull());
        let c = get(ctx.pull());
        median3(a, b, c)
    })
}

/// Every node pulls `k` values (rounded up to odd) and outputs their median.
/// Costs `k` rounds.
pub fn final_median_sample(net: &mut Network, values: &[ValueKey], k: usize) -> Result<Vec<ValueKey>> {
    let k = k.max(1) | 1;
    let mut buf = Vec::with_capacity(k);
    net.run_iteration(values, k as u32, |ctx, prev| {
        let own = prev[ctx.node() as usize];
        buf.clear();
        for _ in 0..k {
            buf.push(ctx.pull().map_or(own, |p| prev[p as usize]));
        }
        *buf.select_nth_unstable(k / 2).1
    })
}

/// Batch size of a robust tournament iteration.
pub fn robust_batch_size(mu: f64, c: f64) -> u32 {
    let r = c / (1.0 - mu);
    (r * r.log2()).ceil() as u32 + 1
}

/// Batch size of the robust final vote over `k` samples.
pub fn robust_final_batch(mu: f64, k: usize) -> u32 {
    let r = k as f64 / (1.0 - mu);
    ((r * r.max(2.0).log2()).ceil() as u32).max(k as u32)
}

/// Pulls up to `batch` peers until `required` good pulls are found; the good
/// peers are left in `out`. Returns whether enough were found. Pulls after
/// the last needed one are not performed.
pub fn robust_pull_batch(
    ctx: &mut NodeCtx<'_>,
    batch: u32,
    required: usize,
    is_good: impl Fn(NodeId) -> bool,
    out: &mut Vec<NodeId>,
) -> bool {
    debug_assert!(batch as usize >= required);
    out.clear();
    for _ in 0..batch {
        if out.len() == required {
            break;
        }
        if let Some(p) = ctx.pull() {
            if is_good(p) {
                out.push(p);
            }
        }
    }
    out.len() == required
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RobustNode {
    pub value: ValueKey,
    pub good: bool,
}

pub fn robust_phase1_iteration(
    net: &mut Network,
    nodes: &[RobustNode],
    delta: f64,
    direction: Direction,
    batch: u32,
) -> Result<Vec<RobustNode>> {
    check_delta(delta)?;
    let mut buf = Vec::with_capacity(2);
    net.run_iteration(nodes, batch, |ctx, prev| {
        let me = prev[ctx.node() as usize];
        let two = ctx.rng().bernoulli(delta);
        let required = if two { 2 } else { 1 };
        if robust_pull_batch(ctx, batch, required, |p| prev[p as usize].good, &mut buf) {
            let a = prev[buf[0] as usize].value;
            let value = if two {
                extreme(direction, a, prev[buf[1] as usize].value)
            } else {
                a
            };
            RobustNode { value, good: true }
        } else {
            RobustNode { good: false, ..me }
        }
    })
}

pub fn robust_phase2_iteration(net: &mut Network, nodes: &[RobustNode], batch: u32) -> Result<Vec<RobustNode>> {
    let mut buf = Vec::with_capacity(3);
    net.run_iteration(nodes, batch, |ctx, prev| {
        let me = prev[ctx.node() as usize];
        if robust_pull_batch(ctx, batch, 3, |p| prev[p as usize].good, &mut buf) {
            let v = |i: usize| prev[buf[i] as usize].value;
            RobustNode {
                value: median3(v(0), v(1), v(2)),
                good: true,
            }
        } else {
            RobustNode { good: false, ..me }
        }
    })
}

/// Robust final vote: nodes with `k` good pulls output the median, the rest
/// output nothing.
pub fn robust_final_sample(
    net: &mut Network,
    nodes: &[RobustNode],
    k: usize,
    batch: u32,
) -> Result<Vec<Option<ValueKey>>> {
    let k = k.max(1) | 1;
    let mut peers = Vec::with_capacity(k);
    let mut vals = Vec::with_capacity(k);
    net.run_iteration(nodes, batch, |ctx, prev| {
        if !robust_pull_batch(ctx, batch, k, |p| prev[p as usize].good, &mut peers) {
            return None;
        }
        vals.clear();
        vals.extend(peers.iter().map(|&p| prev[p as usize].value));
        Some(*vals.select_nth_unstable(k / 2).1)
    })
}

/// One round in which every node without an output pulls a peer and adopts
/// the peer's output, if it has one.
pub fn adopt_outputs(net: &mut Network, outputs: &[Option<ValueKey>]) -> Result<Vec<Option<ValueKey>>> {
    net.run_iteration(outputs, 1, |ctx, prev| match prev[ctx.node() as usize] {
        Some(x) => Some(x),
        None => ctx.pull().and_then(|p| prev[p as usize]),
    })
}

fn check_inputs(phi: f64, eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::invalid("phi", phi, "must lie in [0, 1]"));
    }
    if !(eps > 0.0 && eps <= 0.125) {
        return Err(Error::invalid("eps", eps, "must lie in (0, 1/8]"));
    }
    Ok(())
}

/// Runs the full approximate protocol on `net` starting from `keys`. The
/// observer sees the values after every tournament iteration.
pub fn run_approx(
    net: &mut Network,
    keys: &[ValueKey],
    phi: f64,
    eps: f64,
    params: &TournamentParams,
    variant: Variant,
    observer: &mut dyn FnMut(Stage, &[ValueKey]),
) -> Result<ApproxRun> {
    check_inputs(phi, eps)?;
    if keys.len() != net.n() {
        return Err(Error::invalid("keys", keys.len(), "must hold one key per node"));
    }
    if params.phase2_divisor < 1.0 {
        return Err(Error::invalid("phase2_divisor", params.phase2_divisor, "must be at least 1"));
    }
    let n = net.n();
    observer(Stage::Initial, keys);
    if n == 1 {
        return Ok(ApproxRun {
            outputs: vec![Some(keys[0])],
            phase1_iterations: 0,
            phase2_iterations: 0,
            good_counts: Vec::new(),
        });
    }
    let s1 = two_tournament_schedule(phi, eps)?;
    let s2 = three_tournament_schedule(eps / params.phase2_divisor, n)?;
    let k = params.odd_samples();

    match variant {
        Variant::Plain => {
            let mut values = keys.to_vec();
            for (i, &d) in s1.delta.iter().enumerate() {
                values = phase1_iteration(net, &values, d, s1.direction)?;
                observer(Stage::Phase1(i), &values);
            }
            for i in 0..s2.t {
                values = phase2_iteration(net, &values)?;
                observer(Stage::Phase2(i), &values);
            }
            let outputs = final_median_sample(net, &values, k)?;
            Ok(ApproxRun {
                outputs: outputs.into_iter().map(Some).collect(),
                phase1_iterations: s1.t,
                phase2_iterations: s2.t,
                good_counts: Vec::new(),
            })
        }
        Variant::Robust { t_extra } => {
            let mu = net.failure().mu();
            let batch = robust_batch_size(mu, params.batch_constant).max(3);
            let mut nodes: Vec<RobustNode> = keys.iter().map(|&value| RobustNode { value, good: true }).collect();
            let mut good_counts = Vec::with_capacity(s1.t + s2.t + 1);
            let mut values = Vec::with_capacity(n);
            let count = |nodes: &[RobustNode]| nodes.iter().filter(|x| x.good).count();
            for (i, &d) in s1.delta.iter().enumerate() {
                nodes = robust_phase1_iteration(net, &nodes, d, s1.direction, batch)?;
                good_counts.push(count(&nodes));
                values.clear();
                values.extend(nodes.iter().map(|x| x.value));
                observer(Stage::Phase1(i), &values);
            }
            for i in 0..s2.t {
                nodes = robust_phase2_iteration(net, &nodes, batch)?;
                good_counts.push(count(&nodes));
                values.clear();
                values.extend(nodes.iter().map(|x| x.value));
                observer(Stage::Phase2(i), &values);
            }
            let mut outputs = robust_final_sample(net, &nodes, k, robust_final_batch(mu, k))?;
            good_counts.push(outputs.iter().filter(|x| x.is_some()).count());
            for _ in 0..t_extra {
                outputs = adopt_outputs(net, &outputs)?;
            }
            Ok(ApproxRun {
                outputs,
                phase1_iterations: s1.t,
                phase2_iterations: s2.t,
                good_counts,
            })
        }
    }
}

fn run_trial(
    values: &[i64],
    phi: f64,
    eps: f64,
    config: &SimConfig,
    params: &TournamentParams,
    variant: Variant,
) -> Result<TrialReport> {
    if values.len() != config.n {
        return Err(Error::invalid("values", values.len(), "must hold one value per node"));
    }
    let mut net = Network::new(config.clone())?;
    let keys = ValueKey::initial(values);
    let oracle = RankOracle::new(&keys);
    let window = rank_window(phi, eps, keys.len());
    let mut lmh = Vec::new();
    let run = run_approx(&mut net, &keys, phi, eps, params, variant, &mut |_, v| {
        lmh.push(oracle.classify(v, window))
    })?;
    let mut report = TrialReport::score(&oracle, phi, eps, config.seed, run.outputs);
    report.rounds = net.round();
    report.messages = net.messages();
    report.per_iteration_lmh = lmh;
    report.good_counts = run.good_counts;
    Ok(report)
}

/// Approximate `phi`-quantile of `values` with accuracy `eps`, scored against
/// the sort oracle.
pub fn approx_quantile(
    values: &[i64],
    phi: f64,
    eps: f64,
    config: &SimConfig,
    params: &TournamentParams,
) -> Result<TrialReport> {
    run_trial(values, phi, eps, config, params, Variant::Plain)
}

/// Failure-tolerant variant; `t_extra` extra pull rounds spread outputs to
/// nodes that ended without one.
pub fn robust_approx_quantile(
    values: &[i64],
    phi: f64,
    eps: f64,
    t_extra: usize,
    config: &SimConfig,
    params: &TournamentParams,
) -> Result<TrialReport> {
    run_trial(values, phi, eps, config, params, Variant::Robust { t_extra })
}
