//! Acceptance battery: runs every criterion at full budget and prints one
//! pass/fail line per criterion (visible with `--nocapture`).
//!
//! The same criteria back `ppl verify`; tolerances are pinned in
//! `persuasion::verify`.

use persuasion::verify::{self, CriterionResult, VerifyOptions};

fn full() -> VerifyOptions {
    VerifyOptions {
        quick: false,
        ..VerifyOptions::default()
    }
}

fn check(result: CriterionResult) {
    println!(
        "{} {:<28} {}",
        if result.passed { "PASS" } else { "FAIL" },
        result.id,
        result.details
    );
    assert!(result.passed, "{}: {}", result.id, result.details);
}

#[test]
fn criterion_01_figure2_reproduction() {
    check(verify::criterion_01_figure2());
}

#[test]
fn criterion_02_figure1_manipulability() {
    check(verify::criterion_02_figure1());
}

#[test]
fn criterion_03_figure3_deterministic() {
    check(verify::criterion_03_figure3_deterministic());
}

#[test]
fn criterion_04_symmetric_sweep_convergence() {
    check(verify::criterion_04_symmetric_sweep());
}

#[test]
fn criterion_05_asymmetric_sweep_convergence() {
    check(verify::criterion_05_asymmetric_sweep());
}

#[test]
fn criterion_06_sender_convergence() {
    check(verify::criterion_06_sender_convergence());
}

#[test]
fn criterion_07_oracle_equivalence() {
    check(verify::criterion_07_oracle_equivalence(&full()));
}

#[test]
fn criterion_08_hellman_identity() {
    check(verify::criterion_08_hellman(&full()));
}

#[test]
fn criterion_09_spread_inequality() {
    check(verify::criterion_09_spread(&full()));
}

#[test]
fn criterion_10_hitting_ratio_bound() {
    check(verify::criterion_10_hitting_ratio_bound(&full()));
}

#[test]
fn criterion_11_reduction_soundness() {
    check(verify::criterion_11_reduction(&full()));
}

#[test]
fn criterion_12_transition_diagnostics() {
    check(verify::criterion_12_transition_diagnostics());
}

#[test]
fn criterion_13_monte_carlo_consistency() {
    check(verify::criterion_13_monte_carlo(&full()));
}

#[test]
fn criterion_14_comparative_statics() {
    check(verify::criterion_14_comparative_statics());
}

#[test]
fn fault_injection_is_detected_and_named() {
    let opts = VerifyOptions {
        quick: true,
        hellman_fault: 1e-3,
    };
    let results = verify::run_all(&opts);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    assert_eq!(failed, vec!["hellman-identity"]);
}
