//! End-to-end tests of the `ppl` binary: exit codes, file outputs, and
//! determinism of the CSV table.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ppl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ppl"))
}

fn protocols_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../protocols")
}

fn run(args: &[&str]) -> Output {
    ppl().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn evaluate_figure2() {
    let input = protocols_dir().join("fig2.json");
    let out = run(&["evaluate", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let ur = report["payoff"]["u_receiver"].as_f64().unwrap();
    assert!((ur - 0.7).abs() <= 1e-12);
    assert_eq!(report["shape"]["is_parsimonious"], true);
    assert_eq!(report["absorption"]["H"]["end_prob"], 1.0);
}

#[test]
fn evaluate_figure1_warns_fully_manipulable() {
    let input = protocols_dir().join("fig1.json");
    let out = run(&["evaluate", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert!((report["payoff"]["u_receiver"].as_f64().unwrap() - 0.5).abs() <= 1e-12);
    let warnings = report["warnings"].as_array().unwrap();
    assert!(warnings
        .iter()
        .any(|w| w.as_str().unwrap().contains("fully manipulable")));
}

#[test]
fn evaluate_rejects_bad_row_sum_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(protocols_dir().join("fig2.json"))
        .unwrap()
        .replace("\"3\": {\"h\": {\"3\": 1.0}", "\"3\": {\"h\": {\"3\": 0.9}");
    std::fs::write(&path, text).unwrap();
    let out = run(&["evaluate", "--input", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row sum"), "stderr: {err}");
}

#[test]
fn sweep_writes_deterministic_csv_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(&[
            "sweep",
            "--m",
            "5",
            "--q",
            "0.7",
            "--seed",
            "9",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let text_a = std::fs::read(&a).unwrap();
    let text_b = std::fs::read(&b).unwrap();
    assert_eq!(text_a, text_b, "CSV not byte-identical across runs");

    let text = String::from_utf8(text_a).unwrap();
    assert!(text.starts_with("# ppl sweep --m 5 --q 0.7"));
    assert!(text.contains("--seed 9"));
    let last = text.lines().last().unwrap();
    let u_receiver: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((u_receiver - 0.343 / 0.37).abs() <= 1e-3);
}

#[test]
fn sweep_regime_error_exits_3() {
    let out = run(&["sweep", "--m", "3", "--q", "0.7", "--prior", "0.9"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("max(p, 1-p)"), "stderr: {err}");
}

#[test]
fn sweep_three_states_is_single_exact_row() {
    let out = run(&["sweep", "--m", "3", "--q", "0.7"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 1);
    let u_receiver: f64 = rows[0].split(',').nth(1).unwrap().parse().unwrap();
    assert!((u_receiver - 0.7).abs() <= 1e-12);
}

#[test]
fn reduce_figure2_is_identity() {
    let input = protocols_dir().join("fig2.json");
    let out = run(&["reduce", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["states_before"], 3);
    assert_eq!(report["states_after"], 3);
    let before = report["ur_before"].as_f64().unwrap();
    let after = report["ur_after"].as_f64().unwrap();
    assert!((before - after).abs() <= 1e-12);
    assert!((after - 0.7).abs() <= 1e-12);
}

#[test]
fn reduce_figure1_weakly_improves() {
    let input = protocols_dir().join("fig1.json");
    let out = run(&["reduce", "--input", input.to_str().unwrap(), "--trace"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert!(report["ur_after"].as_f64().unwrap() >= 0.5 - 1e-12);
    assert!(report["states_after"].as_u64().unwrap() <= 3);
    assert!(!report["trace"]["steps"].as_array().unwrap().is_empty());
}

#[test]
fn reduce_random_protocol_has_monotone_trace() {
    let out = run(&["reduce", "--m", "6", "--seed", "42", "--trace"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let steps = report["trace"]["steps"].as_array().unwrap();
    for step in steps {
        let before = step["ur_before"].as_f64().unwrap();
        let after = step["ur_after"].as_f64().unwrap();
        assert!(after >= before - 1e-9, "step lost payoff: {step}");
    }
    let doc = report["protocol"].clone();
    let doc: persuasion::io::ProtocolDocument = serde_json::from_value(doc).unwrap();
    let (_, proto) = persuasion::io::build(&doc).unwrap();
    assert!(persuasion::shape(&proto).is_parsimonious);
}

#[test]
fn verify_quick_passes() {
    let out = run(&["verify", "--quick"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("PASS").count(), 14);
}

#[test]
fn verify_fault_injection_exits_1_naming_hellman() {
    let out = run(&["verify", "--quick", "--inject-hellman-fault", "1e-3"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL hellman-identity"), "stdout: {text}");
    assert!(text.contains("\"failed\":[\"hellman-identity\"]"));
}
