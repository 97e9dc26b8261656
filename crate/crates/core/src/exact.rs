//! Exact quantile by repeated narrowing and duplication.
//!
//! Each iteration brackets the target key between two approximate
//! quantiles, discards everything outside the bracket, and replaces every
//! surviving key by `m` consecutive copies. The target's rank is rescaled
//! accordingly. Once the block of copies of the answer is wider than the
//! approximation error, one last approximate query lands inside it.

use serde::{Deserialize, Serialize};

use crate::aggregates::{exact_count, spread_min_max, DEFAULT_PUSH_SUM_CONSTANT, DEFAULT_SPREAD_CONSTANT};
use crate::error::{Error, Result};
use crate::key::{NodeId, ValueKey};
use crate::oracle::{target_rank, RankOracle};
use crate::sim::{Network, SimConfig};
use crate::tournament::{run_approx, TournamentParams, Variant};

/// Upper limit on the default accuracy, keeping `eps / 2` inside the
/// tournament's domain.
pub const EXACT_EPS_CAP: f64 = 0.24;
pub const EXACT_EPS_FLOOR: f64 = 0.01;

/// Default accuracy for population `n`: `n^-0.05 / 2`, clamped to
/// `[EXACT_EPS_FLOOR, EXACT_EPS_CAP]`.
pub fn default_eps(n: usize) -> f64 {
    ((n.max(1) as f64).powf(-0.05) / 2.0).clamp(EXACT_EPS_FLOOR, EXACT_EPS_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactParams {
    /// Accuracy of the narrowing steps; `None` uses [`default_eps`].
    pub eps: Option<f64>,
    pub max_iterations: usize,
    pub spread_constant: f64,
    pub push_sum_constant: f64,
    /// Push-sum retries (with doubled rounds) before a count is given up.
    pub count_retries: usize,
    /// Repeats of a bracket or final query whose counted ranks show it
    /// missed the target.
    pub query_retries: usize,
    /// Splitting phases are capped at `split_constant * log2 n`, divided by
    /// `1 - mu` under failures.
    pub split_constant: f64,
    /// Relocation phases are capped at `relocation_constant * log2 n`.
    pub relocation_constant: f64,
    /// Most tokens a node may hold at once.
    pub token_cap: usize,
    /// Extra pull rounds after each robust tournament; `None` runs the plain
    /// tournaments.
    pub robust_extra: Option<usize>,
    pub tournament: TournamentParams,
}

impl Default for ExactParams {
    fn default() -> Self {
        let tournament = TournamentParams::default();
        ExactParams {
            eps: None,
            max_iterations: 25,
            spread_constant: DEFAULT_SPREAD_CONSTANT,
            push_sum_constant: DEFAULT_PUSH_SUM_CONSTANT,
            count_retries: 3,
            query_retries: 8,
            split_constant: 4.0,
            relocation_constant: 64.0,
            token_cap: 100 * tournament.odd_samples(),
            robust_extra: None,
            tournament,
        }
    }
}

impl ExactParams {
    /// Robust defaults for population `n`: tournaments followed by
    /// `2 log2 n` extra pull rounds.
    pub fn robust(n: usize) -> Self {
        ExactParams {
            robust_extra: Some(2 * (n.max(2) as f64).log2().ceil() as usize),
            ..Self::default()
        }
    }

    fn variant(&self) -> Variant {
        match self.robust_extra {
            Some(t_extra) => Variant::Robust { t_extra },
            None => Variant::Plain,
        }
    }
}

/// A value with `weight` pending copies, covering copy offsets
/// `[base, base + weight)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub value: ValueKey,
    pub weight: u32,
    pub base: u32,
}

impl Token {
    /// The key of a settled (weight 1) token once every key is expanded into
    /// `m` copies: the original holder's copy gets offset `m - 1`, so all
    /// new copies sit directly beneath it.
    pub fn settled_key(&self, m: u32) -> Result<ValueKey> {
        debug_assert_eq!(self.weight, 1);
        let copy = self
            .value
            .copy
            .checked_mul(m as u64)
            .and_then(|c| c.checked_add(self.base as u64))
            .filter(|&c| c != u64::MAX)
            .ok_or_else(|| Error::Invariant(format!("copy index of {} overflows", self.value)))?;
        Ok(ValueKey { copy, ..self.value })
    }
}

/// Smallest power of two strictly greater than `(n^0.99 / 2) / valued`,
/// and at least 1.
pub fn compute_m(n: usize, valued: usize) -> Result<u32> {
    if valued == 0 {
        return Err(Error::invalid("valued", 0, "must be at least 1"));
    }
    let ratio = (n as f64).powf(0.99) / 2.0 / valued as f64;
    let mut m = 1u32;
    while m as f64 <= ratio {
        m *= 2;
    }
    Ok(m)
}

/// `m (k - r + 1)`.
pub fn rank_update(k: u64, r: u64, m: u32) -> Result<u64> {
    if r > k {
        return Err(Error::Invariant(format!("rank of min {r} exceeds target rank {k}")));
    }
    Ok(m as u64 * (k - r + 1))
}

/// Nodes outside `[min, max]` become valueless.
pub fn filter_range(keys: &[ValueKey], min: ValueKey, max: ValueKey) -> Vec<ValueKey> {
    keys.iter()
        .map(|&k| {
            if k != ValueKey::INFINITY && min <= k && k <= max {
                k
            } else {
                ValueKey::INFINITY
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub min: ValueKey,
    pub max: ValueKey,
    /// Number of keys `<= min`.
    pub rank_of_min: u64,
    /// Number of keys `<= max`.
    pub rank_of_max: u64,
}

impl Window {
    pub fn contains_rank(&self, k: u64) -> bool {
        self.rank_of_min <= k && k <= self.rank_of_max
    }
}

/// Brackets the key of rank `k` between the lowest output of an
/// approximate `(k/n - eps/2)`-quantile and the highest output of an
/// approximate `(k/n + eps/2)`-quantile, both at accuracy `eps/2`, then
/// counts the keys `<= min` and `<= max`.
pub fn narrow_window(
    net: &mut Network,
    keys: &[ValueKey],
    k: u64,
    eps: f64,
    params: &ExactParams,
) -> Result<Window> {
    let n = net.n() as f64;
    let center = k as f64 / n;
    let mut quiet = |_: crate::tournament::Stage, _: &[ValueKey]| {};
    let variant = params.variant();
    // A query clamped to 0 or 1 no longer brackets rank k from its side;
    // there the global extreme is used instead.
    let lows: Vec<ValueKey> = if center - eps / 2.0 < 0.0 {
        keys.to_vec()
    } else {
        let lo = run_approx(net, keys, center - eps / 2.0, eps / 2.0, &params.tournament, variant, &mut quiet)?;
        lo.outputs.iter().map(|o| o.unwrap_or(ValueKey::INFINITY)).collect()
    };
    let highs: Vec<ValueKey> = if center + eps / 2.0 > 1.0 {
        keys.iter()
            .map(|&x| if x == ValueKey::INFINITY { ValueKey::NEG_INFINITY } else { x })
            .collect()
    } else {
        let hi = run_approx(net, keys, center + eps / 2.0, eps / 2.0, &params.tournament, variant, &mut quiet)?;
        hi.outputs.iter().map(|o| o.unwrap_or(ValueKey::NEG_INFINITY)).collect()
    };
    bracket(net, keys, &lows, &highs, params)
}

/// Agrees on the min of `lows` and the max of `highs` and counts the keys
/// at or below each.
fn bracket(net: &mut Network, keys: &[ValueKey], lows: &[ValueKey], highs: &[ValueKey], params: &ExactParams) -> Result<Window> {
    let (min, max) = spread_min_max(net, lows, highs, params.spread_constant)?.agreed()?;
    let mut rank = |z: ValueKey| {
        let bits: Vec<bool> = keys.iter().map(|&x| x <= z).collect();
        exact_count(net, &bits, params.push_sum_constant, params.count_retries)
    };
    let rank_of_min = rank(min)?;
    let rank_of_max = rank(max)?;
    Ok(Window {
        min,
        max,
        rank_of_min,
        rank_of_max,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub keys: Vec<ValueKey>,
    pub splitting_phases: u64,
    pub relocation_phases: u64,
    /// `sum of w^2` over tokens of weight at least 2, before every splitting
    /// phase and after the last.
    pub potential: Vec<f64>,
    pub max_held: usize,
}

fn potential(tokens: &[Vec<Token>]) -> f64 {
    tokens
        .iter()
        .flatten()
        .filter(|t| t.weight >= 2)
        .map(|t| (t.weight as f64).powi(2))
        .sum()
}

/// Replaces every valued key by `m` keys held at distinct nodes. Tokens
/// are split in half until all weights are 1, with one half pushed to a
/// random node; a failed push merges the halves back. Then nodes holding
/// several tokens push all but one until every node holds at most one.
pub fn distribute_tokens(net: &mut Network, keys: &[ValueKey], m: u32, params: &ExactParams) -> Result<Distribution> {
    let n = net.n();
    if !m.is_power_of_two() {
        return Err(Error::invalid("m", m, "must be a power of two"));
    }
    let valued = keys.iter().filter(|&&k| k != ValueKey::INFINITY).count();
    if valued * m as usize > n {
        return Err(Error::invalid("m", m, "m times the valued count exceeds n"));
    }
    let mut tokens: Vec<Vec<Token>> = keys
        .iter()
        .map(|&value| {
            if value == ValueKey::INFINITY {
                Vec::new()
            } else {
                vec![Token { value, weight: m, base: 0 }]
            }
        })
        .collect();
    let log_n = (n.max(2) as f64).log2();
    let mu = net.failure().mu();
    let split_cap = ((params.split_constant / (1.0 - mu)) * log_n).ceil() as u64;
    let split_cap = split_cap.max(m.trailing_zeros() as u64);
    let relocation_cap = ((params.relocation_constant / (1.0 - mu)) * log_n).ceil() as u64;
    let mut max_held = tokens.iter().map(Vec::len).max().unwrap_or(0);
    let mut pot = vec![potential(&tokens)];
    let mut splitting_phases = 0;
    let mut moving: Vec<(NodeId, Token)> = Vec::new();

    while tokens.iter().flatten().any(|t| t.weight > 1) {
        if splitting_phases == split_cap {
            let unsettled = tokens.iter().flatten().filter(|t| t.weight > 1).count();
            return Err(Error::TokensUnsettled {
                unsettled,
                phases: splitting_phases,
            });
        }
        let (mut rounds, mut messages) = (0u64, 0u64);
        for v in 0..n {
            if tokens[v].iter().all(|t| t.weight == 1) {
                continue;
            }
            let mut ctx = net.ctx(v as NodeId);
            for t in tokens[v].iter_mut().filter(|t| t.weight > 1) {
                if let Some(u) = ctx.push() {
                    let half = t.weight / 2;
                    moving.push((u, Token { weight: half, ..*t }));
                    t.weight = half;
                    t.base += half;
                }
            }
            rounds = rounds.max(ctx.slot() as u64);
            messages += ctx.messages();
        }
        net.finish_step(rounds.max(1), messages)?;
        for (u, t) in moving.drain(..) {
            tokens[u as usize].push(t);
        }
        splitting_phases += 1;
        max_held = max_held.max(check_cap(&tokens, params.token_cap)?);
        pot.push(potential(&tokens));
    }

    let mut relocation_phases = 0;
    while tokens.iter().any(|ts| ts.len() > 1) {
        if relocation_phases == relocation_cap {
            let unsettled = tokens.iter().map(|ts| ts.len().saturating_sub(1)).sum();
            return Err(Error::TokensUnsettled {
                unsettled,
                phases: relocation_phases,
            });
        }
        let (mut rounds, mut messages) = (0u64, 0u64);
        for v in 0..n {
            if tokens[v].len() <= 1 {
                continue;
            }
            let mut ctx = net.ctx(v as NodeId);
            let rest = tokens[v].split_off(1);
            for t in rest {
                match ctx.push() {
                    Some(u) => moving.push((u, t)),
                    None => tokens[v].push(t),
                }
            }
            rounds = rounds.max(ctx.slot() as u64);
            messages += ctx.messages();
        }
        net.finish_step(rounds.max(1), messages)?;
        for (u, t) in moving.drain(..) {
            tokens[u as usize].push(t);
        }
        relocation_phases += 1;
        max_held = max_held.max(check_cap(&tokens, params.token_cap)?);
    }

    let keys = tokens
        .iter()
        .map(|ts| ts.first().map_or(Ok(ValueKey::INFINITY), |t| t.settled_key(m)))
        .collect::<Result<_>>()?;
    Ok(Distribution {
        keys,
        splitting_phases,
        relocation_phases,
        potential: pot,
        max_held,
    })
}

/// [`distribute_tokens`] on a network with failures. Phase caps scale with
/// `1 / (1 - mu)`; the potential trace records the decay.
pub fn robust_distribute_tokens(net: &mut Network, keys: &[ValueKey], m: u32, params: &ExactParams) -> Result<Distribution> {
    distribute_tokens(net, keys, m, params)
}

fn check_cap(tokens: &[Vec<Token>], cap: usize) -> Result<usize> {
    let held = tokens.iter().map(Vec::len).max().unwrap_or(0);
    if held > cap {
        return Err(Error::TokenCapExceeded { held, cap });
    }
    Ok(held)
}

/// State after one narrowing iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationInfo {
    pub iteration: usize,
    pub min: ValueKey,
    pub max: ValueKey,
    pub rank_of_min: u64,
    pub valued: u64,
    pub m: u32,
    /// Target rank and block size after the iteration.
    pub k: u64,
    pub block: u64,
    /// Bracket queries repeated because they missed rank `k`.
    pub retries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactOutcome {
    /// Each node's answer (an initial key).
    pub outputs: Vec<Option<ValueKey>>,
    pub iterations: Vec<IterationInfo>,
    pub eps: f64,
    pub rounds: u64,
    pub messages: u64,
}

impl ExactOutcome {
    /// The common answer, if every node agrees.
    pub fn answer(&self) -> Option<ValueKey> {
        let first = self.outputs.first().copied().flatten()?;
        self.outputs.iter().all(|o| *o == Some(first)).then_some(first)
    }
}

/// Runs the exact protocol on `net`. The observer sees every iteration's
/// summary and the keys after duplication.
pub fn run_exact(
    net: &mut Network,
    initial: &[ValueKey],
    phi: f64,
    params: &ExactParams,
    observer: &mut dyn FnMut(&IterationInfo, &[ValueKey]),
) -> Result<(Vec<Option<ValueKey>>, Vec<IterationInfo>)> {
    let n = net.n();
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::invalid("phi", phi, "must lie in [0, 1]"));
    }
    let eps = params.eps.unwrap_or_else(|| default_eps(n));
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::invalid("eps", eps, "must lie in (0, 1/4]"));
    }
    if n == 1 {
        return Ok((vec![Some(initial[0])], Vec::new()));
    }
    let mut keys = initial.to_vec();
    let mut k = target_rank(phi, n) as u64;
    let mut block = 1u64;
    let mut infos = Vec::new();
    let threshold = eps * n as f64;

    for iteration in 0..params.max_iterations {
        if block as f64 >= threshold {
            break;
        }
        let mut w = narrow_window(net, &keys, k, eps, params)?;
        let mut retries = 0;
        while !w.contains_rank(k) {
            if retries == params.query_retries {
                return Err(Error::Invariant(format!(
                    "bracket missed rank {k} after {retries} retries"
                )));
            }
            retries += 1;
            w = narrow_window(net, &keys, k, eps, params)?;
        }
        let filtered = filter_range(&keys, w.min, w.max);
        if w.min.same_identity(&w.max) {
            let info = IterationInfo {
                iteration,
                min: w.min,
                max: w.max,
                rank_of_min: w.rank_of_min,
                valued: 0,
                m: 1,
                k,
                block,
                retries,
            };
            observer(&info, &filtered);
            infos.push(info);
            return Ok((vec![Some(w.min.identity()); n], infos));
        }
        // Keys are distinct, so the counted ranks give the survivors unless
        // the bracket reaches the valueless sentinel.
        let valued = if w.max == ValueKey::INFINITY {
            let bits: Vec<bool> = filtered.iter().map(|&x| x != ValueKey::INFINITY).collect();
            exact_count(net, &bits, params.push_sum_constant, params.count_retries)?
        } else {
            w.rank_of_max - w.rank_of_min + 1
        };
        let m = compute_m(n, valued as usize)?;
        block = m as u64 * block.min(k - w.rank_of_min + 1);
        k = rank_update(k, w.rank_of_min, m)?;
        keys = if m == 1 {
            filtered
        } else {
            distribute_tokens(net, &filtered, m, params)?.keys
        };
        let info = IterationInfo {
            iteration,
            min: w.min,
            max: w.max,
            rank_of_min: w.rank_of_min,
            valued,
            m,
            k,
            block,
            retries,
        };
        observer(&info, &keys);
        infos.push(info);
    }

    let phi_final = ((k as f64 - threshold / 2.0) / n as f64).clamp(0.0, 1.0);
    for _ in 0..=params.query_retries {
        let run = run_approx(
            net,
            &keys,
            phi_final,
            eps / 3.0,
            &params.tournament,
            params.variant(),
            &mut |_, _| {},
        )?;
        let lows: Vec<ValueKey> = run.outputs.iter().map(|o| o.unwrap_or(ValueKey::INFINITY)).collect();
        let highs: Vec<ValueKey> = run.outputs.iter().map(|o| o.unwrap_or(ValueKey::NEG_INFINITY)).collect();
        let w = bracket(net, &keys, &lows, &highs, params)?;
        if w.rank_of_min + block > k && w.rank_of_max <= k {
            let outputs = run.outputs.into_iter().map(|o| o.map(|x| x.identity())).collect();
            return Ok((outputs, infos));
        }
    }
    Err(Error::Invariant(format!(
        "final query missed the answer block after {} retries",
        params.query_retries
    )))
}

/// Exact `phi`-quantile of `values`.
pub fn exact_quantile(values: &[i64], phi: f64, config: &SimConfig, params: &ExactParams) -> Result<ExactOutcome> {
    if values.len() != config.n {
        return Err(Error::invalid("values", values.len(), "must hold one value per node"));
    }
    let mut net = Network::new(config.clone())?;
    let keys = ValueKey::initial(values);
    let (outputs, iterations) = run_exact(&mut net, &keys, phi, params, &mut |_, _| {})?;
    Ok(ExactOutcome {
        outputs,
        iterations,
        eps: params.eps.unwrap_or_else(|| default_eps(config.n)),
        rounds: net.round(),
        messages: net.messages(),
    })
}

/// The key an exact run must return.
pub fn expected_answer(values: &[i64], phi: f64) -> ValueKey {
    let keys = ValueKey::initial(values);
    RankOracle::new(&keys).quantile_key(phi)
}
