//! Experiment configuration: a JSON file, overridden field by field by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, ValueEnum};
use gossipq::analysis::{DEFAULT_BUFFER_CONSTANT, DEFAULT_FINAL_SAMPLES};
use gossipq::exact::{default_eps, ExactParams};
use gossipq::sketch::DEFAULT_SAMPLE_CONSTANT;
use gossipq::tournament::TournamentParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Approx,
    Exact,
    Robust,
    Sketch,
    Spread,
    Selfq,
    Schedule,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Approx => "approx",
            Command::Exact => "exact",
            Command::Robust => "robust",
            Command::Sketch => "sketch",
            Command::Spread => "spread",
            Command::Selfq => "selfq",
            Command::Schedule => "schedule",
        }
    }
}

/// How the `sketch` command estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SketchMethod {
    /// Doubling with compacted buffers.
    #[default]
    Doubling,
    /// One uniform sample per round, no compaction.
    Sample,
    /// Every node sees every value.
    Exhaustive,
}

/// Protocol constants. Every one is echoed into the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Samples in the final median vote (rounded up to odd).
    pub final_samples: usize,
    pub phase2_divisor: f64,
    pub batch_constant: f64,
    pub spread_constant: f64,
    pub push_sum_constant: f64,
    pub max_iterations: usize,
    pub query_retries: usize,
    pub count_retries: usize,
    pub sample_constant: f64,
    pub buffer_constant: f64,
}

impl Default for Constants {
    fn default() -> Self {
        let exact = ExactParams::default();
        let t = TournamentParams::default();
        Constants {
            final_samples: DEFAULT_FINAL_SAMPLES,
            phase2_divisor: t.phase2_divisor,
            batch_constant: t.batch_constant,
            spread_constant: exact.spread_constant,
            push_sum_constant: exact.push_sum_constant,
            max_iterations: exact.max_iterations,
            query_retries: exact.query_retries,
            count_retries: exact.count_retries,
            sample_constant: DEFAULT_SAMPLE_CONSTANT,
            buffer_constant: DEFAULT_BUFFER_CONSTANT,
        }
    }
}

impl Constants {
    pub fn tournament(&self) -> TournamentParams {
        TournamentParams {
            phase2_divisor: self.phase2_divisor,
            final_samples: self.final_samples,
            batch_constant: self.batch_constant,
        }
    }

    pub fn exact(&self, eps: f64, robust_extra: Option<usize>) -> ExactParams {
        let tournament = self.tournament();
        ExactParams {
            eps: Some(eps),
            max_iterations: self.max_iterations,
            spread_constant: self.spread_constant,
            push_sum_constant: self.push_sum_constant,
            count_retries: self.count_retries,
            query_retries: self.query_retries,
            token_cap: 100 * tournament.odd_samples(),
            robust_extra,
            tournament,
            ..ExactParams::default()
        }
    }
}

/// Contents of a config file. Missing fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub phi: Option<f64>,
    pub eps: Option<f64>,
    pub mu: Option<f64>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub trials: Option<usize>,
    pub t_extra: Option<usize>,
    pub exact: Option<bool>,
    pub method: Option<SketchMethod>,
    pub min_success_rate: Option<f64>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub constants: Option<Constants>,
}

#[derive(Debug, Parser)]
#[command(name = "gossipq", version, about = "Monte Carlo runner for gossip quantile protocols")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Per-round failure probability.
    #[arg(long)]
    pub mu: Option<f64>,
    /// First seed; trials use `seed, seed + 1, ...`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Explicit seed list; overrides `--seed` and `--trials`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Extra adoption rounds of the robust protocol.
    #[arg(long)]
    pub t_extra: Option<usize>,
    /// `robust` only: run the exact protocol under failures.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum)]
    pub method: Option<SketchMethod>,
    /// Fraction of successful trials the command must reach to exit 0.
    #[arg(long)]
    pub min_success_rate: Option<f64>,
    /// CSV output path; standard output if absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON summary path; standard error if absent.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub final_samples: Option<usize>,
    #[arg(long)]
    pub phase2_divisor: Option<f64>,
    #[arg(long)]
    pub batch_constant: Option<f64>,
    #[arg(long)]
    pub spread_constant: Option<f64>,
    #[arg(long)]
    pub push_sum_constant: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub query_retries: Option<usize>,
    #[arg(long)]
    pub count_retries: Option<usize>,
    #[arg(long)]
    pub sample_constant: Option<f64>,
    #[arg(long)]
    pub buffer_constant: Option<f64>,
}

/// Fully resolved configuration of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub n: usize,
    pub phi: f64,
    pub eps: f64,
    pub mu: f64,
    pub seeds: Vec<u64>,
    pub t_extra: usize,
    pub exact: bool,
    pub method: SketchMethod,
    pub min_success_rate: f64,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub constants: Constants,
}

pub const DEFAULT_N: usize = 1000;
pub const DEFAULT_PHI: f64 = 0.5;
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_T_EXTRA: usize = 10;

pub fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn default_eps_for(command: Command, exact: bool, n: usize) -> f64 {
    match command {
        Command::Exact => default_eps(n),
        Command::Robust if exact => default_eps(n),
        Command::Spread => 0.01,
        Command::Sketch | Command::Selfq => 0.1,
        _ => 0.05,
    }
}

fn default_success_rate(command: Command, exact: bool) -> f64 {
    match command {
        Command::Exact | Command::Spread | Command::Schedule => 1.0,
        Command::Robust if exact => 0.98,
        Command::Robust | Command::Selfq => 0.95,
        Command::Approx | Command::Sketch => 0.99,
    }
}

impl ExperimentConfig {
    /// Merges `file` and `flags` (flags win) and fills in defaults.
    pub fn resolve(command: Command, file: FileConfig, flags: &Flags) -> Result<Self, CliError> {
        let n = flags.n.or(file.n).unwrap_or(DEFAULT_N);
        let exact = flags.exact || file.exact.unwrap_or(false);
        if exact && command != Command::Robust {
            return Err(CliError::Config("--exact applies to the robust command only".into()));
        }
        let seeds = match flags.seeds.clone().or(file.seeds) {
            Some(list) => list,
            None => {
                let seed = flags.seed.or(file.seed).unwrap_or(0);
                let trials = flags.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS) as u64;
                (seed..seed + trials).collect()
            }
        };
        let mut c = file.constants.unwrap_or_default();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = flags.$f { c.$f = v; } )* };
        }
        take!(
            final_samples,
            phase2_divisor,
            batch_constant,
            spread_constant,
            push_sum_constant,
            max_iterations,
            query_retries,
            count_retries,
            sample_constant,
            buffer_constant
        );
        let cfg = ExperimentConfig {
            command,
            n,
            phi: flags.phi.or(file.phi).unwrap_or(DEFAULT_PHI),
            eps: flags.eps.or(file.eps).unwrap_or_else(|| default_eps_for(command, exact, n)),
            mu: flags.mu.or(file.mu).unwrap_or(0.0),
            seeds,
            t_extra: flags.t_extra.or(file.t_extra).unwrap_or(DEFAULT_T_EXTRA),
            exact,
            method: flags.method.or(file.method).unwrap_or_default(),
            min_success_rate: flags
                .min_success_rate
                .or(file.min_success_rate)
                .unwrap_or_else(|| default_success_rate(command, exact)),
            csv: flags.csv.clone().or(file.csv),
            json: flags.json.clone().or(file.json),
            constants: c,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.n == 0 || self.n >= u32::MAX as usize {
            return bad(format!("n = {} out of range", self.n));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return bad(format!("phi = {} must lie in [0, 1]", self.phi));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps = {} must lie in (0, 1)", self.eps));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu = {} must lie in [0, 1)", self.mu));
        }
        if self.seeds.is_empty() && self.command != Command::Schedule {
            return bad("at least one trial is required".into());
        }
        if !(0.0..=1.0).contains(&self.min_success_rate) {
            return bad(format!("min_success_rate = {} must lie in [0, 1]", self.min_success_rate));
        }
        let nf = self.n as f64;
        match self.command {
            Command::Approx | Command::Robust if !self.exact && self.eps > 0.125 => {
                bad(format!("eps = {} must be at most 1/8", self.eps))
            }
            Command::Selfq if self.eps >= 0.125 => bad(format!("eps = {} must be below 1/8", self.eps)),
            Command::Spread if !(10.0 * nf.ln() / nf < self.eps && self.eps < 0.125) => {
                bad(format!("eps = {} must lie in (10 ln n / n, 1/8)", self.eps))
            }
            Command::Exact | Command::Robust if self.eps > 0.25 => {
                bad(format!("eps = {} must be at most 1/4", self.eps))
            }
            Command::Sketch if self.n < 4 => bad("sketch needs n >= 4".into()),
            _ => Ok(()),
        }
    }

    pub fn robust_extra(&self) -> Option<usize> {
        (self.command == Command::Robust).then_some(self.t_extra)
    }
}
