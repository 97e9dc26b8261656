use std::fs;
use std::path::Path;

use gossipq_cli::config::Command;
use gossipq_cli::report::{read_csv, Summary, CSV_HEADER};
use gossipq_cli::{run_cli, EXIT_ASSERTION, EXIT_CONFIG, EXIT_OK};

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("gossipq").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn schedule_prints_worked_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("schedule.json");
    assert_eq!(run(&["schedule", "--phi", "0.25", "--eps", "0.125", "--json", path_str(&out)]), EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["phase1"]["t"], 2);
    assert_eq!(v["phase1"]["h"], serde_json::json!([0.625, 0.390625, 0.152587890625]));
    assert_eq!(v["phase1"]["direction"], "shrink-high");
}

#[test]
fn one_trial_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let json = dir.path().join("summary.json");
    let code = run(&[
        "approx", "--n", "2000", "--eps", "0.1", "--trials", "1", "--csv", path_str(&csv), "--json", path_str(&json),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].ends_with(",1") || lines[1].ends_with(",0"));
}

#[test]
fn summary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let json = dir.path().join("summary.json");
    let code = run(&[
        "exact", "--n", "256", "--phi", "0.9", "--trials", "3", "--csv", path_str(&csv), "--json", path_str(&json),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&json).unwrap();
    let summary: Summary = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&summary).unwrap(), text.trim_end());
    assert_eq!(summary.config.command, Command::Exact);
    let agg = &summary.experiments["exact"];
    assert_eq!(agg.trials, 3);
    assert_eq!(agg.successes, 3);
    assert!(agg.fitted_constant > 0.0);
    let rows = read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.success && r.max_rank_error == 0));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let j = dir.path().join("s.json");
        run(&["robust", "--n", "3000", "--mu", "0.3", "--eps", "0.1", "--trials", "3", "--seed", "11", "--csv", path_str(out), "--json", path_str(&j)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let csv = dir.path().join("rows.csv");
    let json = dir.path().join("s.json");
    fs::write(
        &cfg,
        format!(r#"{{"n": 400, "seeds": [3, 4], "eps": 0.1, "csv": "{}", "json": "{}"}}"#, path_str(&csv), path_str(&json)),
    )
    .unwrap();
    assert_eq!(run(&["sketch", "--config", path_str(&cfg), "--n", "600"]), EXIT_OK);
    let rows = read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.n == 600 && r.experiment == "sketch"));
    assert_eq!(rows[0].seed, 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("s.json");
    let csv = dir.path().join("r.csv");
    let j = path_str(&json);
    let c = path_str(&csv);
    assert_eq!(run(&["approx", "--eps", "0.5"]), EXIT_CONFIG);
    assert_eq!(run(&["nonsense"]), EXIT_CONFIG);
    assert_eq!(run(&["approx", "--trials", "1", "--csv", "/nonexistent-dir/x.csv", "--json", j]), EXIT_CONFIG);
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["approx", "--config", path_str(&missing)]), EXIT_CONFIG);
    // Far below the validity floor the protocol cannot meet the window.
    assert_eq!(
        run(&["approx", "--n", "200", "--eps", "0.01", "--trials", "3", "--csv", c, "--json", j]),
        EXIT_ASSERTION
    );
    assert_eq!(run(&["spread", "--n", "100000", "--eps", "0.02", "--trials", "2", "--csv", c, "--json", j]), EXIT_OK);
}
