//! Per-trial outcome records.

use serde::{Deserialize, Serialize};

use crate::key::ValueKey;
use crate::oracle::{rank_window, target_rank, Lmh, RankOracle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub n: usize,
    pub seed: u64,
    pub rounds: u64,
    pub messages: u64,
    /// Population split against the target rank window after every
    /// iteration, starting with the initial assignment.
    pub per_iteration_lmh: Vec<Lmh>,
    /// Good-node counts after every robust iteration; empty otherwise.
    pub good_counts: Vec<usize>,
    pub outputs: Vec<Option<ValueKey>>,
    pub target_rank: usize,
    pub window: (usize, usize),
    /// Largest `|rank(output) - target_rank|` over nodes with an output.
    pub max_rank_error: u64,
    /// Nodes whose output has a rank inside `window`.
    pub correct: usize,
    /// Nodes without any output.
    pub missing: usize,
}

impl TrialReport {
    /// Scores `outputs` against the oracle's ranks.
    pub fn score(
        oracle: &RankOracle,
        phi: f64,
        eps: f64,
        seed: u64,
        outputs: Vec<Option<ValueKey>>,
    ) -> Self {
        let n = oracle.n();
        let target = target_rank(phi, n);
        let window = rank_window(phi, eps, n);
        let mut max_err = 0u64;
        let mut correct = 0;
        let mut missing = 0;
        for out in &outputs {
            match out {
                Some(key) => {
                    let r = oracle.rank(key);
                    max_err = max_err.max(r.abs_diff(target) as u64);
                    if r >= window.0 && r <= window.1 && r >= 1 {
                        correct += 1;
                    }
                }
                None => missing += 1,
            }
        }
        TrialReport {
            n,
            seed,
            rounds: 0,
            messages: 0,
            per_iteration_lmh: Vec::new(),
            good_counts: Vec::new(),
            outputs,
            target_rank: target,
            window,
            max_rank_error: max_err,
            correct,
            missing,
        }
    }

    /// Every node output a value inside the window.
    pub fn success(&self) -> bool {
        self.correct == self.n
    }

    pub fn without_correct_output(&self) -> usize {
        self.n - self.correct
    }
}
