//! Command-line experiment runner.
//!
//! Each invocation runs one command over a list of seeds, writes one CSV
//! row per trial and a JSON summary, and exits 0 only if the command's
//! success threshold was met.

pub mod config;
pub mod experiments;
pub mod report;

use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use clap::Parser;
use gossipq::analysis::{shift_bound, three_tournament_schedule, tournament_bound, two_tournament_schedule};
use rayon::prelude::*;
use serde_json::json;

use config::{Cli, Command, ExperimentConfig, FileConfig};
use report::{Summary, TrialRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file or parameters.
    Config(String),
    /// An output could not be written.
    Output(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_ASSERTION,
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var("GOSSIPQ_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(Some(k)),
            _ => Err(CliError::Config(format!("GOSSIPQ_THREADS = {s:?} is not a positive integer"))),
        },
    }
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let file = match &cli.flags.config {
        Some(path) => config::load_file(path)?,
        None => FileConfig::default(),
    };
    let cfg = ExperimentConfig::resolve(cli.command, file, &cli.flags)?;
    if cfg.command == Command::Schedule {
        return print_schedule(&cfg).map(|_| true);
    }
    let warnings = experiments::validity_warnings(&cfg);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    // Open outputs first so an unwritable path fails before any work.
    let csv_out = cfg.csv.as_deref().map(create).transpose()?;
    let json_out = cfg.json.as_deref().map(create).transpose()?;

    let rows = run_trials(&cfg)?;
    let write_err = |e: csv::Error| CliError::Output(e.to_string());
    match csv_out {
        Some(f) => report::write_csv(f, &rows).map_err(write_err)?,
        None => report::write_csv(io::stdout().lock(), &rows).map_err(write_err)?,
    }
    let summary = Summary::new(&cfg, &rows, warnings);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    match json_out {
        Some(mut f) => writeln!(f, "{text}").map_err(|e| CliError::Output(e.to_string()))?,
        None => eprintln!("{text}"),
    }
    for (name, agg) in &summary.experiments {
        if !agg.passed {
            eprintln!(
                "{name}: success rate {:.3} below required {:.3}",
                agg.success_rate, agg.required_success_rate
            );
        }
    }
    Ok(summary.passed())
}

/// Runs every seed of `cfg`, in parallel, and returns rows in seed order.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialRow>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_count()? {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| experiments::run_trial(cfg, seed))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(|e| CliError::Config(e.to_string()))
}

fn print_schedule(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let bad = |e: gossipq::Error| CliError::Config(e.to_string());
    let phase1 = two_tournament_schedule(cfg.phi, cfg.eps).map_err(bad)?;
    let phase2 = three_tournament_schedule(cfg.eps, cfg.n.max(2)).map_err(bad)?;
    let out = json!({
        "phase1": phase1,
        "phase2": phase2,
        "shift_bound": shift_bound(cfg.eps),
        "tournament_bound": tournament_bound(cfg.eps, cfg.n.max(2)),
    });
    let text = serde_json::to_string_pretty(&out).expect("schedule serializes");
    match cfg.json.as_deref() {
        Some(path) => writeln!(create(path)?, "{text}").map_err(|e| CliError::Output(e.to_string())),
        None => {
            // A closed pipe on standard output is not an error worth reporting.
            let _ = writeln!(io::stdout(), "{text}");
            Ok(())
        }
    }
}
