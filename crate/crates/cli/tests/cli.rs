use std::path::Path;
use std::process::{Command, Output};

use surveil_core::analysis::{BehaviorCategory, SummaryReport};
use surveil_core::Treatment;

fn surveil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surveil")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tsv_column(text: &str, row_key: &str, col: usize) -> f64 {
    text.lines()
        .find(|l| l.split('\t').next() == Some(row_key))
        .unwrap_or_else(|| panic!("no row {row_key} in\n{text}"))
        .split('\t')
        .nth(col)
        .unwrap()
        .parse()
        .unwrap()
}

const OPTIMIZERS: &str = r#"
seed = 11

[[group]]
profile = { kind = "optimizer" }
count = 50
treatment = "closed"

[[group]]
profile = { kind = "optimizer" }
count = 50
treatment = "open"
"#;

#[test]
fn evaluate_reports_survival() {
    let text = stdout(&surveil(&["evaluate", "--policy", "fixed:8", "--policy", "closed-heuristic"]));
    let fixed = text.lines().find(|l| l.starts_with("plan:8x10")).expect("fixed plan row");
    assert!(fixed.contains("0.1986"), "{fixed}");
    assert!(text.lines().any(|l| l.starts_with("closed-heuristic")));

    let tsv = stdout(&surveil(&["evaluate", "--policy", "fixed:8", "--format", "tabular"]));
    let survival = tsv_column(&tsv, "plan:8x10", 3);
    assert!((survival - 0.98f64.powi(80)).abs() < 1e-12);
}

#[test]
fn optimum_dominates_the_heuristic() {
    let solved = stdout(&surveil(&["solve", "--format", "tabular"]));
    let dp_solve = tsv_column(&solved, "expected_value", 1);
    let heuristic_solve = tsv_column(&solved, "heuristic_expected_value", 1);
    let tsv = stdout(&surveil(&["evaluate", "--policy", "dp", "--policy", "closed-heuristic", "--format", "tabular"]));
    let dp = tsv_column(&tsv, "dp", 1);
    let heuristic = tsv_column(&tsv, "closed-heuristic", 1);
    assert!(dp >= heuristic, "{dp} < {heuristic}");
    assert!((dp - dp_solve).abs() < 1e-9);
    assert!((heuristic - heuristic_solve).abs() < 1e-9);
}

#[test]
fn tabular_output_is_reproducible() {
    for args in [
        vec!["solve", "--format", "tabular"],
        vec!["simulate", "--policy", "open-heuristic", "-n", "5000", "--seed", "4", "--format", "tabular"],
    ] {
        assert_eq!(stdout(&surveil(&args)), stdout(&surveil(&args)));
    }
    let other_seed = stdout(&surveil(&["simulate", "-n", "5000", "--seed", "5", "--format", "tabular"]));
    let seed_four = stdout(&surveil(&["simulate", "-n", "5000", "--seed", "4", "--format", "tabular"]));
    assert_ne!(other_seed, seed_four);
}

#[test]
fn synthetic_optimizers_are_all_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.toml");
    std::fs::write(&pop, OPTIMIZERS).unwrap();
    let logs = dir.path().join("sessions.jsonl");
    let logs_again = dir.path().join("again.jsonl");
    let report_dir = dir.path().join("report");
    for target in [&logs, &logs_again] {
        stdout(&surveil(&["synth", "--population", pop.to_str().unwrap(), "--out", target.to_str().unwrap()]));
    }
    assert_eq!(std::fs::read(&logs).unwrap(), std::fs::read(&logs_again).unwrap());
    assert_eq!(std::fs::read_to_string(&logs).unwrap().lines().count(), 100);

    stdout(&surveil(&["analyze", "--in", logs.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]));
    let report: SummaryReport =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("summary.json")).unwrap()).unwrap();
    for t in Treatment::ALL {
        let s = report.treatment(t).unwrap();
        assert_eq!(s.sessions, 50);
        assert_eq!(s.category_share(BehaviorCategory::Optimal), 1.0, "{t}: {:?}", s.categories);
    }
    assert!(report_dir.join("summary.txt").exists());
    assert!(report_dir.join("summary.tsv").exists());

    let text = stdout(&surveil(&["analyze", "--in", logs.to_str().unwrap()]));
    assert!(text.contains("optimal"));
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[mission]\ndrone_valu = 400\n").unwrap();
    let out = surveil(&["--config", bad.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drone_valu"));

    std::fs::write(&bad, "[mission]\ncrash_prob = 1.5\n").unwrap();
    assert_eq!(surveil(&["--config", bad.to_str().unwrap(), "evaluate"]).status.code(), Some(2));
    assert_eq!(surveil(&["--config", "/nonexistent/surveil.toml", "solve"]).status.code(), Some(2));
    assert_eq!(surveil(&["evaluate", "--policy", "psychic"]).status.code(), Some(2));
    assert_eq!(surveil(&["evaluate", "--policy", "fixed:9"]).status.code(), Some(2));
    assert_eq!(surveil(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn internal_failures_exit_with_one() {
    let out = surveil(&["analyze", "--in", "/nonexistent/sessions.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_changes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[mission]\ncrash_prob = 0.0\n").unwrap();
    let tsv = stdout(&surveil(&["--config", cfg.to_str().unwrap(), "evaluate", "--policy", "fixed:8", "--format", "tabular"]));
    assert_eq!(tsv_column(&tsv, "plan:8x10", 3), 1.0);
}

#[test]
fn compute_commands_can_run_on_a_service() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let addr = rt.block_on(async {
        let state = surveil_service::AppState::new(Default::default()).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(surveil_service::serve_on(listener, state));
        addr
    });
    let url = format!("http://{addr}");
    let local = stdout(&surveil(&["evaluate", "--format", "tabular"]));
    let remote = stdout(&surveil(&["--server", &url, "evaluate", "--format", "tabular"]));
    assert_eq!(local, remote);
    let args = ["simulate", "-n", "3000", "--seed", "9", "--format", "tabular"];
    let remote_sim = stdout(&surveil(&[&["--server", url.as_str()][..], &args[..]].concat()));
    assert_eq!(stdout(&surveil(&args)), remote_sim);
    let out = surveil(&["--server", &url, "evaluate", "--policy", "fixed:9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(Path::new(env!("CARGO_BIN_EXE_surveil")).exists());
}
