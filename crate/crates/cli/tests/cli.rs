use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsic-tune"))
        .args(args)
        .current_dir(dir)
        .env("HSIC_TUNE_JOBS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
    assert_eq!(code(&run(dir.path(), &[])), 1);
    assert_eq!(code(&run(dir.path(), &["search", "--objective", "quadratic"])), 1);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["search", "--objective", "nope", "--out", "t.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert_eq!(code(&run(dir.path(), &["analyze", "missing.jsonl"])), 2);

    std::fs::write(dir.path().join("bad.jsonl"), "{\"manifest\": 3}\n").unwrap();
    let o = run(dir.path(), &["analyze", "bad.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl:1"));
}

#[test]
fn search_analyze_reduce_optimize_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = run(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["search", "--objective", "three-term", "--n", "300", "--seed", "4", "--out", "t.jsonl"]);
    // resume is a no-op
    ok(&["search", "--objective", "three-term", "--n", "300", "--seed", "4", "--out", "t.jsonl"]);
    assert_eq!(std::fs::read_to_string(d.join("t.jsonl")).unwrap().lines().count(), 301);

    ok(&["analyze", "t.jsonl", "--boot", "30", "--out", "rep"]);
    assert!(d.join("rep/ranking_main.csv").exists());
    assert!(d.join("rep/interactions.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rep/summary.json")).unwrap()).unwrap();
    assert!(summary["report"].is_object());

    ok(&["analyze", "t.jsonl", "--goal", "worst", "--no-interactions", "--boot", "20", "--out", "worst"]);
    assert!(d.join("worst/levels_x3.csv").exists());

    ok(&["reduce", "t.jsonl", "--param", "x3", "--out", "red"]);
    assert!(d.join("red/reduction_x3.csv").exists());

    ok(&["optimize", "t.jsonl", "--budget-step1", "4", "--budget-step2", "3", "--n-init", "3", "--out", "opt"]);
    let two: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("opt/two_step.json")).unwrap()).unwrap();
    assert!(two["fixed"].is_array());

    ok(&["report", "t.jsonl", "--out", "flat"]);
    let csv = std::fs::read_to_string(d.join("flat/trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
}

#[test]
fn demo_and_bateman_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["demo", "example2", "--n", "800", "--out", "demo"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("demo/summary.json").exists());

    let o = run(d, &["bateman", "--n", "25", "--out", "b.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(d.join("b.csv")).unwrap().lines().count(), 26);
}
