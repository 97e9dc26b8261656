//! One trial of each experiment, scored against the sort oracle.

use gossipq::exact::run_exact;
use gossipq::sim::{random_values, FailureModel, Network, SimConfig};
use gossipq::sketch::{exhaustive_sample_quantile, sketch_quantile, uniform_sample_quantile};
use gossipq::tournament::{run_approx, Variant};
use gossipq::{Error, RankOracle, TrialReport, ValueKey};

use crate::config::{Command, ExperimentConfig, SketchMethod};
use crate::report::TrialRow;

/// Values of a trial: `n` integers from `[0, 10 n)`.
pub fn trial_values(n: usize, seed: u64) -> Vec<i64> {
    random_values(n, 10 * n as u64, seed)
}

pub fn sim_config(n: usize, mu: f64, seed: u64) -> Result<SimConfig, Error> {
    let config = SimConfig::new(n, seed);
    Ok(if mu > 0.0 {
        config.with_failure(FailureModel::uniform(mu)?)
    } else {
        config
    })
}

/// Soft validity floors on `eps`. Their constants are unknown, so falling
/// below one only produces a warning.
pub fn validity_warnings(cfg: &ExperimentConfig) -> Vec<String> {
    let n = cfg.n.max(2) as f64;
    let eps = cfg.eps;
    let mut out = Vec::new();
    let mut check = |floor: f64, what: &str| {
        if eps < floor {
            out.push(format!("eps = {eps} is below the {what} floor {floor:.4} at n = {}", cfg.n));
        }
    };
    match cfg.command {
        Command::Approx | Command::Robust | Command::Selfq if !cfg.exact => {
            check(n.powf(-1.0 / 4.47), "quantile-shifting");
            check(n.log2().powf(0.61) / n.powf(0.096), "median-tournament");
        }
        Command::Sketch => check(n.powf(-1.0 / 16.0), "sampling"),
        _ => {}
    }
    out
}

fn row(cfg: &ExperimentConfig, seed: u64, phi: Option<f64>, rounds: u64, messages: u64, err: u64, success: bool) -> TrialRow {
    TrialRow {
        experiment: cfg.command.name().to_string(),
        n: cfg.n,
        phi,
        eps: cfg.eps,
        mu: cfg.mu,
        seed,
        rounds,
        messages,
        max_rank_error: err,
        success,
    }
}

/// Runs one trial of `cfg.command`. Protocol-level failures (a count that
/// never settled, a bracket that kept missing) are recorded as failed
/// trials; invalid parameters are returned as errors.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRow, Error> {
    let result = match cfg.command {
        Command::Approx => approx_trial(cfg, seed),
        Command::Robust if !cfg.exact => approx_trial(cfg, seed),
        Command::Exact | Command::Robust => exact_trial(cfg, seed),
        Command::Sketch => sketch_trial(cfg, seed),
        Command::Selfq => selfq_trial(cfg, seed),
        Command::Spread => spread_trial(cfg, seed),
        Command::Schedule => Err(TrialError::Fatal(Error::Invariant("schedule runs no trials".into()))),
    };
    match result {
        Err(TrialError::Protocol { error, rounds, messages }) => {
            eprintln!("{} seed {seed}: {error}", cfg.command.name());
            Ok(row(cfg, seed, Some(cfg.phi), rounds, messages, cfg.n as u64, false))
        }
        Err(TrialError::Fatal(e)) => Err(e),
        Ok(r) => Ok(r),
    }
}

enum TrialError {
    Protocol { error: Error, rounds: u64, messages: u64 },
    Fatal(Error),
}

impl From<Error> for TrialError {
    fn from(e: Error) -> Self {
        TrialError::Fatal(e)
    }
}

fn on_net<T>(net: &Network, r: Result<T, Error>) -> Result<T, TrialError> {
    r.map_err(|error| match error {
        Error::InvalidParameter { .. } => TrialError::Fatal(error),
        error => TrialError::Protocol {
            error,
            rounds: net.round(),
            messages: net.messages(),
        },
    })
}

fn approx_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRow, TrialError> {
    let values = trial_values(cfg.n, seed);
    let keys = ValueKey::initial(&values);
    let oracle = RankOracle::new(&keys);
    let mut net = Network::new(sim_config(cfg.n, cfg.mu, seed)?)?;
    let variant = match cfg.robust_extra() {
        Some(t_extra) => Variant::Robust { t_extra },
        None => Variant::Plain,
    };
    let params = cfg.constants.tournament();
    let run = run_approx(&mut net, &keys, cfg.phi, cfg.eps, &params, variant, &mut |_, _| {});
    let run = on_net(&net, run)?;
    let report = TrialReport::score(&oracle, cfg.phi, cfg.eps, seed, run.outputs);
    let success = match variant {
        Variant::Plain => report.success(),
        Variant::Robust { t_extra } => robust_success(&report, t_extra),
    };
    Ok(row(cfg, seed, Some(cfg.phi), net.round(), net.messages(), report.max_rank_error, success))
}

/// All but `n / 2^t_extra` nodes hold an output inside the window.
pub fn robust_success(report: &TrialReport, t_extra: usize) -> bool {
    let allowed = (report.n as f64 / 2f64.powi(t_extra.min(1000) as i32)).floor() as usize;
    report.without_correct_output() <= allowed
}

fn exact_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRow, TrialError> {
    let values = trial_values(cfg.n, seed);
    let keys = ValueKey::initial(&values);
    let oracle = RankOracle::new(&keys);
    let mut net = Network::new(sim_config(cfg.n, cfg.mu, seed)?)?;
    let extra = (cfg.command == Command::Robust).then(|| 2 * (cfg.n.max(2) as f64).log2().ceil() as usize);
    let params = cfg.constants.exact(cfg.eps, extra);
    let run = run_exact(&mut net, &keys, cfg.phi, &params, &mut |_, _| {});
    let (outputs, _) = on_net(&net, run)?;
    let report = TrialReport::score(&oracle, cfg.phi, 0.0, seed, outputs);
    let expected = oracle.quantile_key(cfg.phi);
    let success = report.outputs.iter().all(|o| *o == Some(expected));
    Ok(row(cfg, seed, Some(cfg.phi), net.round(), net.messages(), report.max_rank_error, success))
}

fn sketch_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRow, TrialError> {
    let values = trial_values(cfg.n, seed);
    let keys = ValueKey::initial(&values);
    let oracle = RankOracle::new(&keys);
    let mut net = Network::new(sim_config(cfg.n, cfg.mu, seed)?)?;
    let c = &cfg.constants;
    let outputs: Vec<Option<ValueKey>> = match cfg.method {
        SketchMethod::Doubling => {
            // Ranks stand in for keys to keep buffers small.
            let ranks: Vec<u32> = keys.iter().map(|k| oracle.rank(k) as u32).collect();
            let run = sketch_quantile(&mut net, &ranks, cfg.phi, cfg.eps, c.sample_constant, c.buffer_constant);
            let run = on_net(&net, run)?;
            run.outputs.iter().map(|&r| Some(oracle.key_at(r as usize))).collect()
        }
        SketchMethod::Sample => {
            let run = uniform_sample_quantile(&mut net, &keys, cfg.phi, cfg.eps, c.sample_constant);
            on_net(&net, run)?.into_iter().map(Some).collect()
        }
        SketchMethod::Exhaustive => exhaustive_sample_quantile(&keys, cfg.phi).into_iter().map(Some).collect(),
    };
    let report = TrialReport::score(&oracle, cfg.phi, cfg.eps, seed, outputs);
    Ok(row(cfg, seed, Some(cfg.phi), net.round(), net.messages(), report.max_rank_error, report.success()))
}

/// Per-node self-quantile estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfQuantile {
    pub estimates: Vec<f64>,
    /// Fraction of keys below each node's own key.
    pub truth: Vec<f64>,
    pub queries: usize,
}

impl SelfQuantile {
    pub fn max_error(&self) -> f64 {
        self.estimates
            .iter()
            .zip(&self.truth)
            .map(|(e, t)| (e - t).abs())
            .fold(0.0, f64::max)
    }
}

/// Every node estimates the quantile of its own value from approximate
/// quantiles at `eps, 2 eps, ...` computed to accuracy `eps / 2`: its
/// estimate is `eps` times the number of returned values below its key.
pub fn self_quantile(net: &mut Network, keys: &[ValueKey], eps: f64, cfg: &ExperimentConfig) -> Result<SelfQuantile, Error> {
    if !(eps > 0.0 && eps < 0.125) {
        return Err(Error::InvalidParameter {
            name: "eps",
            value: eps.to_string(),
            reason: "must lie in (0, 1/8)",
        });
    }
    let n = keys.len();
    let queries = (1.0 / eps - 1e-9).ceil() as usize - 1;
    let params = cfg.constants.tournament();
    let variant = match cfg.robust_extra() {
        Some(t_extra) => Variant::Robust { t_extra },
        None => Variant::Plain,
    };
    let mut below = vec![0usize; n];
    for j in 1..=queries {
        let run = run_approx(net, keys, j as f64 * eps, eps / 2.0, &params, variant, &mut |_, _| {})?;
        for (v, out) in run.outputs.iter().enumerate() {
            if matches!(out, Some(x) if *x < keys[v]) {
                below[v] += 1;
            }
        }
    }
    let oracle = RankOracle::new(keys);
    Ok(SelfQuantile {
        estimates: below.iter().map(|&b| eps * b as f64).collect(),
        truth: keys.iter().map(|k| (oracle.rank(k) - 1) as f64 / n as f64).collect(),
        queries,
    })
}

fn selfq_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRow, TrialError> {
    let values = trial_values(cfg.n, seed);
    let keys = ValueKey::initial(&values);
    let mut net = Network::new(sim_config(cfg.n, cfg.mu, seed)?)?;
    let sq = self_quantile(&mut net, &keys, cfg.eps, cfg);
    let sq = on_net(&net, sq)?;
    let err = sq.max_error();
    let rank_err = (err * cfg.n as f64 - 1e-9).ceil().max(0.0) as u64;
    Ok(row(cfg, seed, None, net.round(), net.messages(), rank_err, err <= 2.0 * cfg.eps + 1e-12))
}

/// Lower bound on the rounds of the spread experiment: `ceil(log4(8/eps))`.
pub fn spread_lower_bound(eps: f64) -> u64 {
    ((8.0 / eps).ln() / 4f64.ln() - 1e-9).ceil() as u64
}

/// Spread of goodness from `2 floor(2 eps n)` initially good nodes. Each
/// round every node pushes to one random node and pulls from another; a
/// bad node turns good once it hears from a good one. Returns the first
/// round after which no bad node is left.
pub fn spread_experiment(net: &mut Network, eps: f64) -> Result<u64, Error> {
    let n = net.n();
    let initial = (2 * (2.0 * eps * n as f64).floor() as usize).min(n);
    let mut good: Vec<bool> = (0..n).map(|v| v < initial).collect();
    let mut bad = n - initial;
    let cap = 20 * (n.max(2) as f64).log2().ceil() as u64 + 100;
    let start = net.round();
    while bad > 0 {
        if net.round() - start >= cap {
            return Err(Error::Invariant(format!("{bad} nodes still bad after {cap} rounds")));
        }
        let mut next = good.clone();
        let mut messages = 0;
        for v in 0..n {
            let mut ctx = net.ctx(v as u32);
            let failed = ctx.fails_at(0);
            let push_to = ctx.contact() as usize;
            let pull_from = ctx.contact() as usize;
            if failed {
                continue;
            }
            messages += 2;
            if good[v] {
                next[push_to] = true;
            } else if good[pull_from] {
                next[v] = true;
            }
        }
        good = next;
        bad = good.iter().filter(|&&g| !g).count();
        net.finish_step(1, messages)?;
    }
    Ok(net.round() - start)
}

fn spread_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRow, TrialError> {
    let mut net = Network::new(sim_config(cfg.n, cfg.mu, seed)?)?;
    let rounds = spread_experiment(&mut net, cfg.eps);
    let rounds = on_net(&net, rounds)?;
    let ok = rounds >= spread_lower_bound(cfg.eps) || 2 * (2.0 * cfg.eps * cfg.n as f64).floor() as usize >= cfg.n;
    Ok(row(cfg, seed, None, rounds, net.messages(), 0, ok))
}
