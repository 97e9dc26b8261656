//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use gossipq::aggregates::{push_sum_count, spread_min_max, spread_rounds, PushSum, DEFAULT_PUSH_SUM_CONSTANT, DEFAULT_SPREAD_CONSTANT};
use gossipq::analysis::{
    shift_bound, three_tournament_schedule, tournament_bound, two_tournament_schedule, Direction,
};
use gossipq::exact::{compute_m, distribute_tokens, exact_quantile, expected_answer, ExactParams};
use gossipq::sim::{FailureModel, Network, NodeRng, SimConfig};
use gossipq::sketch::compaction_error_check;
use gossipq::tournament::{
    approx_quantile, phase1_iteration, phase2_iteration, robust_approx_quantile, TournamentParams,
};
use gossipq::{rank_window, RankOracle, ValueKey};
use gossipq_cli::experiments::{robust_success, spread_experiment, spread_lower_bound, trial_values};
use gossipq_cli::report::{fit_basis, fit_constant};
use gossipq_cli::config::Command;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn net(n: usize, seed: u64) -> Network {
    Network::new(SimConfig::new(n, seed)).unwrap()
}

fn failing_net(n: usize, seed: u64, mu: f64) -> Network {
    Network::new(SimConfig::new(n, seed).with_failure(FailureModel::uniform(mu).unwrap())).unwrap()
}

fn exact_correctness() -> Outcome {
    let start = Instant::now();
    let params = ExactParams::default();
    let mut total = 0;
    let mut correct = 0;
    let mut misses = Vec::new();
    for n in [256, 1024, 4096] {
        for phi in [0.1, 0.5, 0.9] {
            for seed in 0..50 {
                let values = trial_values(n, seed);
                let expected = expected_answer(&values, phi);
                total += 1;
                match exact_quantile(&values, phi, &SimConfig::new(n, seed), &params) {
                    Ok(out) if out.outputs.iter().all(|o| *o == Some(expected)) => correct += 1,
                    Ok(_) => misses.push(format!("n={n} phi={phi} seed={seed}: wrong answer")),
                    Err(e) => misses.push(format!("n={n} phi={phi} seed={seed}: {e}")),
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("{correct}/{total} exact, {secs:.1} s");
    if let Some(first) = misses.first() {
        detail += &format!("; first miss {first}");
    }
    outcome(correct == total && secs < 60.0, detail)
}

fn approx_quantiles() -> Outcome {
    let n = 100_000;
    let eps = 0.05;
    let params = TournamentParams::default();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut points = Vec::new();
    for phi in [0.1, 0.5, 0.9] {
        let mut ok = 0;
        let mut rounds = 0;
        for seed in 0..100 {
            let values = trial_values(n, seed);
            let r = approx_quantile(&values, phi, eps, &SimConfig::new(n, seed), &params).unwrap();
            ok += r.success() as usize;
            rounds += r.rounds;
            points.push((fit_basis(Command::Approx, n, eps).1, r.rounds as f64));
        }
        pass &= ok >= 99;
        parts.push(format!("phi={phi}: {ok}/100, mean rounds {:.1}", rounds as f64 / 100.0));
    }
    parts.push(format!(
        "fitted c = {:.2} against log2 log2 n + log2 1/eps",
        fit_constant(&points)
    ));
    outcome(pass, parts.join("; "))
}

/// Pooled fraction over all seeds compared with the binomial law of a
/// single iteration. Per-seed hits are reported but not asserted.
fn one_step_laws() -> Outcome {
    let n = 100_000;
    let seeds = 200u64;
    let check = |p: f64, expect: f64, step: &dyn Fn(&mut Network, &[ValueKey]) -> Vec<ValueKey>| {
        let high0 = (p * n as f64).round() as usize;
        let mut total = 0usize;
        let mut within = 0;
        let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
        for seed in 0..seeds {
            let keys = ValueKey::initial(&trial_values(n, seed));
            let oracle = RankOracle::new(&keys);
            let cut = oracle.key_at(n - high0);
            let mut network = net(n, seed);
            let out = step(&mut network, &keys);
            let high = out.iter().filter(|&&k| k > cut).count();
            total += high;
            within += ((high as f64 / n as f64 - expect).abs() <= 3.0 * sigma) as usize;
        }
        let frac = total as f64 / (seeds as usize * n) as f64;
        let pooled_sigma = sigma / (seeds as f64).sqrt();
        let z = (frac - expect) / pooled_sigma;
        (z.abs() <= 3.0, format!("{frac:.5} vs {expect:.5} (z = {z:.2}, {within}/{seeds} seeds within 3 sigma)"))
    };
    let (a, da) = check(0.6, 0.36, &|net, keys| phase1_iteration(net, keys, 1.0, Direction::ShrinkHigh).unwrap());
    let p: f64 = 0.4;
    let (b, db) = check(p, 3.0 * p * p - 2.0 * p.powi(3), &|net, keys| phase2_iteration(net, keys).unwrap());
    outcome(a && b, format!("two-sample min {da}; median of three {db}"))
}

fn phase1_endpoint() -> Outcome {
    let n = 100_000;
    let eps = 0.1;
    let mut pass = true;
    let mut parts = Vec::new();
    for phi in [0.1, 0.25, 0.75, 0.9] {
        let schedule = two_tournament_schedule(phi, eps).unwrap();
        let target = schedule.threshold;
        let window = rank_window(phi, eps, n);
        let mut ok = 0;
        for seed in 0..100 {
            let keys = ValueKey::initial(&trial_values(n, seed));
            let oracle = RankOracle::new(&keys);
            let mut network = net(n, seed);
            let mut values = keys;
            for &d in &schedule.delta {
                values = phase1_iteration(&mut network, &values, d, schedule.direction).unwrap();
            }
            let lmh = oracle.classify(&values, window);
            let tail = match schedule.direction {
                Direction::ShrinkHigh => lmh.high,
                Direction::ShrinkLow => lmh.low,
            } as f64
                / n as f64;
            let mid = lmh.mid as f64 / n as f64;
            ok += ((tail - target).abs() <= eps / 2.0 && mid >= 1.75 * eps) as usize;
        }
        pass &= ok >= 95;
        parts.push(format!("phi={phi} (t={}): {ok}/100", schedule.t));
    }
    outcome(pass, parts.join("; "))
}

fn schedule_oracles() -> Outcome {
    let mut rng = NodeRng::from_state(0x5eed);
    let mut violations = Vec::new();
    // Informational: the bound with each of its two terms rounded up.
    let mut rounded_violations = 0;
    for _ in 0..1000 {
        let phi = rng.next_f64();
        let eps = (rng.next_f64() * 0.125).max(1e-6);
        let n = 2f64.powf(1.0 + rng.next_f64() * 39.0) as usize;
        let s1 = two_tournament_schedule(phi, eps).unwrap();
        let s2 = three_tournament_schedule(eps, n).unwrap();
        if s1.t as f64 > shift_bound(eps) {
            violations.push(format!("shift t={} at eps={eps}", s1.t));
        }
        if s2.t as f64 > tournament_bound(eps, n) {
            violations.push(format!(
                "median t={} > {:.4} at eps={eps} n={n}",
                s2.t,
                tournament_bound(eps, n)
            ));
        }
        let i0 = ((1.0 / (4.0 * eps)).ln() / (11.0f64 / 8.0).ln()).max(0.0).ceil();
        let i1 = ((n as f64).ln() / 4f64.ln()).log2().max(0.0).ceil();
        rounded_violations += (s2.t as f64 > i0 + i1) as usize;
    }
    let s = two_tournament_schedule(0.25, 0.125).unwrap();
    let worked_shift = s.h == [0.625, 0.390625, 0.152587890625] && s.t == 2 && (s.delta[1] - 0.0656410256).abs() < 1e-9;
    let m = three_tournament_schedule(0.125, 1_000_000).unwrap();
    let worked_median = m.l[0] == 0.375 && m.l[1] == 0.31640625 && (m.l[2] - 0.2369861).abs() < 1e-7 && m.t == 5;
    let mut detail = format!(
        "{} bound violations in 1000 fuzzed cases ({rounded_violations} with both terms rounded up); \
         worked shift schedule {}, worked median schedule {}",
        violations.len(),
        if worked_shift { "matches" } else { "differs" },
        if worked_median { "matches" } else { "differs" }
    );
    if let Some(v) = violations.first() {
        detail += &format!("; first: {v}");
    }
    outcome(violations.is_empty() && worked_shift && worked_median, detail)
}

fn compaction_determinism() -> Outcome {
    let mut rng = NodeRng::from_state(0xc0ffee);
    let mut runs = 0;
    let mut failures = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for log_n in 8..=14 {
        let n_prime = 1u64 << log_n;
        for log_k in 5..=7 {
            let k = 1u64 << log_k;
            let bound = gossipq::analysis::compaction_error_bound(n_prime, k).unwrap();
            for _ in 0..100 {
                // Mix of wide and narrow ranges so that some datasets carry ties.
                let range = if rng.bernoulli(0.5) { n_prime * 16 } else { n_prime / 4 };
                let data: Vec<u64> = (0..n_prime).map(|_| rng.below(range)).collect();
                runs += 1;
                match compaction_error_check(n_prime, k, &data, &mut rng) {
                    Ok(err) => worst_ratio = worst_ratio.max(err as f64 / bound.max(1) as f64),
                    Err(e) => failures.push(format!("n'={n_prime} k={k}: {e}")),
                }
            }
        }
    }
    let mut detail = format!(
        "{}/{runs} within bound, largest error/bound {worst_ratio:.3}",
        runs - failures.len()
    );
    if let Some(f) = failures.first() {
        detail += &format!("; first failure {f}");
    }
    outcome(failures.is_empty(), detail)
}

fn robustness() -> Outcome {
    let mu = 0.5;
    let n = 100_000;
    let eps = 0.05;
    let t_extra = 10;
    let params = TournamentParams::default();
    let mut approx_ok = 0;
    let mut worst = 0;
    for seed in 0..100 {
        let values = trial_values(n, seed);
        let config = SimConfig::new(n, seed).with_failure(FailureModel::uniform(mu).unwrap());
        let r = robust_approx_quantile(&values, 0.5, eps, t_extra, &config, &params).unwrap();
        worst = worst.max(r.without_correct_output());
        approx_ok += robust_success(&r, t_extra) as usize;
    }

    let n_exact = 1024;
    let mut exact_ok = 0;
    let params_exact = ExactParams::robust(n_exact);
    for seed in 0..50 {
        let values = trial_values(n_exact, seed);
        let expected = expected_answer(&values, 0.5);
        let config = SimConfig::new(n_exact, seed).with_failure(FailureModel::uniform(mu).unwrap());
        if let Ok(out) = exact_quantile(&values, 0.5, &config, &params_exact) {
            exact_ok += out.outputs.iter().all(|o| *o == Some(expected)) as usize;
        }
    }

    // Token potential under failures: every splitting phase should shrink it
    // by at least a quarter on average.
    let n_tok = 4096;
    let valued = n_tok / 16;
    let m = compute_m(n_tok, valued).unwrap();
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let keys: Vec<ValueKey> = (0..n_tok)
            .map(|v| if v < valued { ValueKey::new(v as i64, v as u32) } else { ValueKey::INFINITY })
            .collect();
        let mut network = failing_net(n_tok, seed, mu);
        let d = distribute_tokens(&mut network, &keys, m, &ExactParams::robust(n_tok)).unwrap();
        ratios.extend(d.potential.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]));
    }
    let count = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / count;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (count - 1.0)).sqrt();
    let limit = 0.75 + 3.0 * sd / count.sqrt();

    let pass = approx_ok >= 95 && exact_ok >= 49 && mean <= limit;
    outcome(
        pass,
        format!(
            "robust approx {approx_ok}/100 (at most {} nodes allowed without a correct output, worst {worst}); \
             robust exact {exact_ok}/50; potential ratio {mean:.4} over {} phases (limit {limit:.4}, m={m})",
            n / (1 << t_extra),
            ratios.len()
        ),
    )
}

fn aggregation_exactness() -> Outcome {
    let n = 4096;
    let mut counts_ok = 0;
    let mut worst_drift: f64 = 0.0;
    let mut spread_ok = 0;
    for seed in 0..100 {
        let mut rng = NodeRng::from_state(seed ^ 0xabcdef);
        let bits: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
        let truth = bits.iter().filter(|&&b| b).count() as u64;
        let mut network = net(n, seed);
        let out = push_sum_count(&mut network, &bits, DEFAULT_PUSH_SUM_CONSTANT).unwrap();
        counts_ok += (out.count() == Some(truth)) as usize;

        let mut ps = PushSum::new(&bits);
        let (s0, w0) = ps.mass();
        let mut mass_net = net(n, seed + 1000);
        for _ in 0..out.rounds {
            ps.round(&mut mass_net).unwrap();
            let (s, w) = ps.mass();
            worst_drift = worst_drift.max(((s - s0) / s0).abs()).max(((w - w0) / w0).abs());
        }

        let keys = ValueKey::initial(&trial_values(n, seed));
        let mut spread_net = net(n, seed + 2000);
        let sp = spread_min_max(&mut spread_net, &keys, &keys, DEFAULT_SPREAD_CONSTANT).unwrap();
        spread_ok += (sp.converged() && sp.converged_at.unwrap() <= spread_rounds(n, DEFAULT_SPREAD_CONSTANT, 0.0)) as usize;
    }
    outcome(
        counts_ok == 100 && worst_drift <= 1e-9 && spread_ok == 100,
        format!(
            "push-sum count exact {counts_ok}/100; worst relative mass drift {worst_drift:.2e}; spread converged {spread_ok}/100"
        ),
    )
}

fn spread_dynamics() -> Outcome {
    let n = 1_000_000;
    let eps = 0.01;
    let bound = spread_lower_bound(eps);
    let mut rounds = Vec::new();
    for seed in 0..100 {
        rounds.push(spread_experiment(&mut net(n, seed), eps).unwrap());
    }
    let min = *rounds.iter().min().unwrap();
    let max = *rounds.iter().max().unwrap();

    // Not asserted: medians should not decrease as eps shrinks.
    let medians: Vec<u64> = [0.08, 0.04, 0.02, 0.01]
        .iter()
        .map(|&e| {
            let mut r: Vec<u64> = (0..21).map(|s| spread_experiment(&mut net(100_000, s), e).unwrap()).collect();
            r.sort_unstable();
            r[10]
        })
        .collect();
    outcome(
        min >= bound,
        format!("rounds in [{min}, {max}] over 100 seeds, bound {bound}; medians at n=1e5 for eps 0.08..0.01: {medians:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("C1 exact quantile correctness", exact_correctness),
        ("C2 approximate quantile", approx_quantiles),
        ("C3 one-step expectation laws", one_step_laws),
        ("C4 shifting phase endpoint", phase1_endpoint),
        ("C5 schedule oracles", schedule_oracles),
        ("C6 compaction determinism", compaction_determinism),
        ("C7 robustness", robustness),
        ("C8 aggregation exactness", aggregation_exactness),
        ("C9 spread experiment", spread_dynamics),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += !o.pass as usize;
        println!(
            "{} {name} ({:.1} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
