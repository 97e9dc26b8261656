//! CSV rows and the JSON summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{Command, ExperimentConfig};

pub const CSV_HEADER: &str = "experiment,n,phi,eps,mu,seed,rounds,messages,max_rank_error,success";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub experiment: String,
    pub n: usize,
    /// Empty for experiments without a target quantile.
    pub phi: Option<f64>,
    pub eps: f64,
    pub mu: f64,
    pub seed: u64,
    pub rounds: u64,
    pub messages: u64,
    pub max_rank_error: u64,
    #[serde(serialize_with = "bit", deserialize_with = "from_bit")]
    pub success: bool,
}

fn bit<S: Serializer>(b: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(*b as u8)
}

fn from_bit<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        x => Err(serde::de::Error::custom(format!("success must be 0 or 1, got {x}"))),
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[TrialRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<TrialRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Least-squares constant `c` of `rounds ~ c x` through the origin.
pub fn fit_constant(points: &[(f64, f64)]) -> f64 {
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// The quantity each experiment's rounds are fitted against.
pub fn fit_basis(command: Command, n: usize, eps: f64) -> (&'static str, f64) {
    let nf = n.max(4) as f64;
    let loglog = nf.log2().log2() + (1.0 / eps).log2();
    match command {
        Command::Exact => ("log2 n", nf.log2()),
        Command::Selfq => ("(1/eps)(log2 log2 n + log2 1/eps)", loglog / eps),
        Command::Spread => ("log2 n", nf.log2()),
        _ => ("log2 log2 n + log2 1/eps", loglog),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub required_success_rate: f64,
    pub passed: bool,
    pub rounds_mean: f64,
    pub rounds_min: u64,
    pub rounds_max: u64,
    pub messages_mean: f64,
    pub max_rank_error: u64,
    pub fit_basis: String,
    pub fitted_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub experiments: BTreeMap<String, Aggregate>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn new(config: &ExperimentConfig, rows: &[TrialRow], warnings: Vec<String>) -> Self {
        let mut groups: BTreeMap<String, Vec<&TrialRow>> = BTreeMap::new();
        for r in rows {
            groups.entry(r.experiment.clone()).or_default().push(r);
        }
        let experiments = groups
            .into_iter()
            .map(|(name, rs)| (name, aggregate(config, &rs)))
            .collect();
        Summary {
            config: config.clone(),
            experiments,
            warnings,
        }
    }

    pub fn passed(&self) -> bool {
        self.experiments.values().all(|a| a.passed)
    }
}

fn aggregate(config: &ExperimentConfig, rows: &[&TrialRow]) -> Aggregate {
    let trials = rows.len();
    let successes = rows.iter().filter(|r| r.success).count();
    let success_rate = successes as f64 / trials.max(1) as f64;
    let mean = |f: fn(&TrialRow) -> u64| rows.iter().map(|r| f(r) as f64).sum::<f64>() / trials.max(1) as f64;
    let (basis, _) = fit_basis(config.command, config.n, config.eps);
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (fit_basis(config.command, r.n, r.eps).1, r.rounds as f64))
        .collect();
    Aggregate {
        trials,
        successes,
        success_rate,
        required_success_rate: config.min_success_rate,
        passed: success_rate >= config.min_success_rate,
        rounds_mean: mean(|r| r.rounds),
        rounds_min: rows.iter().map(|r| r.rounds).min().unwrap_or(0),
        rounds_max: rows.iter().map(|r| r.rounds).max().unwrap_or(0),
        messages_mean: mean(|r| r.messages),
        max_rank_error: rows.iter().map(|r| r.max_rank_error).max().unwrap_or(0),
        fit_basis: basis.to_string(),
        fitted_constant: fit_constant(&points),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(seed: u64, success: bool) -> TrialRow {
        TrialRow {
            experiment: "approx".into(),
            n: 1000,
            phi: Some(0.5),
            eps: 0.05,
            mu: 0.0,
            seed,
            rounds: 60,
            messages: 60_000,
            max_rank_error: 12,
            success,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let mut row = sample_row(3, true);
        write_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        row.phi = None;
        row.success = false;
        write_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "approx,1000,0.5,0.05,0.0,3,60,60000,12,1");
        assert_eq!(lines[3], "approx,1000,,0.05,0.0,3,60,60000,12,0");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![sample_row(1, true), sample_row(2, false)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn fit_through_origin() {
        assert_eq!(fit_constant(&[(1.0, 2.0), (2.0, 4.0)]), 2.0);
        assert_eq!(fit_constant(&[]), 0.0);
        assert!((fit_constant(&[(1.0, 1.0), (2.0, 5.0)]) - 11.0 / 5.0).abs() < 1e-12);
    }
}
