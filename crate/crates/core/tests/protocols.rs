use gossipq::exact::{exact_quantile, expected_answer, ExactParams};
use gossipq::sim::{random_values, FailureModel, SimConfig};
use gossipq::sketch::sketch_quantile;
use gossipq::tournament::{approx_quantile, robust_approx_quantile, TournamentParams};
use gossipq::{rank_window, RankOracle, ValueKey};

#[test]
fn approx_outputs_land_in_window() {
    let values = random_values(2000, 20_000, 5);
    for seed in 0..5 {
        let cfg = SimConfig::new(values.len(), seed);
        let report = approx_quantile(&values, 0.3, 0.05, &cfg, &TournamentParams::default()).unwrap();
        assert_eq!(report.correct, values.len(), "seed {seed}");
        assert_eq!(report.missing, 0);
    }
}

#[test]
fn robust_approx_survives_failures() {
    let values = random_values(2000, 20_000, 6);
    let cfg = SimConfig::new(values.len(), 2).with_failure(FailureModel::Uniform { mu: 0.2 });
    let report = robust_approx_quantile(&values, 0.5, 0.05, 10, &cfg, &TournamentParams::default()).unwrap();
    assert!(report.correct >= values.len() - 2, "{} correct", report.correct);
}

#[test]
fn exact_agrees_with_sort() {
    let values = random_values(512, 100, 7);
    for (seed, phi) in [(0, 0.5), (1, 0.1), (2, 0.9)] {
        let cfg = SimConfig::new(values.len(), seed);
        let out = exact_quantile(&values, phi, &cfg, &ExactParams::default()).unwrap();
        assert_eq!(out.answer(), Some(expected_answer(&values, phi)), "phi {phi}");
    }
}

#[test]
fn exact_runs_are_reproducible() {
    let values = random_values(300, 1000, 8);
    let cfg = SimConfig::new(values.len(), 11);
    let a = exact_quantile(&values, 0.5, &cfg, &ExactParams::default()).unwrap();
    let b = exact_quantile(&values, 0.5, &cfg, &ExactParams::default()).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_eq!((a.rounds, a.messages), (b.rounds, b.messages));
}

#[test]
fn sketch_estimates_are_close() {
    let values = random_values(1024, 1 << 20, 9);
    let keys = ValueKey::initial(&values);
    let oracle = RankOracle::new(&keys);
    let mut net = gossipq::sim::Network::new(SimConfig::new(keys.len(), 4)).unwrap();
    let run = sketch_quantile(&mut net, &keys, 0.5, 0.1, 8.0, 4.0).unwrap();
    let (lo, hi) = rank_window(0.5, 0.1, keys.len());
    assert_eq!(run.outputs.len(), keys.len());
    for k in &run.outputs {
        let r = oracle.rank(k);
        assert!((lo..=hi).contains(&r), "rank {r} outside [{lo}, {hi}]");
    }
}
