//! The acceptance suite at the stated sizes and tolerances, one test per
//! criterion. Each test writes its report line straight to stderr so the line
//! shows up whether or not output is captured.

use std::io::Write;

use tradeoff_harness::acceptance::{run_criterion, AcceptanceOptions};

fn check(id: u8) {
    let r = run_criterion(id, &AcceptanceOptions::default());
    let _ = writeln!(std::io::stderr(), "{r}");
    assert!(r.passed, "{r}");
}

#[test]
fn criterion_01_target_dirichlet_energy() {
    check(1);
}

#[test]
fn criterion_02_sgd_sum_to_one() {
    check(2);
}

#[test]
fn criterion_03_rf_theory_match() {
    check(3);
}

#[test]
fn criterion_04_rf_asymptotes() {
    check(4);
}

#[test]
fn criterion_05_ridge_monotonicity() {
    check(5);
}

#[test]
fn criterion_06_lazy_rf_corrections() {
    check(6);
}

#[test]
fn criterion_07_init_formulas() {
    check(7);
}

#[test]
fn criterion_08_nt_curves() {
    check(8);
}

#[test]
fn criterion_09_ntl_decomposition() {
    check(9);
}

#[test]
fn criterion_10_linearization_shrinkage() {
    check(10);
}

#[test]
fn criterion_11_audit_increments() {
    check(11);
}

#[test]
fn criterion_12_exact_vs_monte_carlo() {
    check(12);
}
