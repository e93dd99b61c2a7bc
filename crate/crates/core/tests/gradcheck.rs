//! Central finite-difference checks of every differentiable op and of the
//! full network.

mod support;

use support::gradient::{network_check, op_errors, MIN_CHECKED, NETWORK_CASES, TOL};

#[test]
fn every_op_matches_finite_differences() {
    let failures: Vec<String> = op_errors()
        .into_iter()
        .filter(|(_, e)| !(*e < TOL))
        .map(|(name, e)| format!("{name}: {e:.2e}"))
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

fn network(case: usize) {
    let (name, fusion, calibrated, q) = NETWORK_CASES[case];
    let c = network_check(fusion, calibrated, 1, q);
    assert!(c.checked >= MIN_CHECKED, "{name}: only {} smooth coordinates ({} kinked)", c.checked, c.kinked);
    assert!(c.worst < TOL, "{name}: worst relative error {:.2e} over {} coordinates", c.worst, c.checked);
}

#[test]
fn full_network_single_image() {
    network(0);
}

#[test]
fn full_network_max_fusion() {
    network(1);
}

#[test]
fn full_network_average_fusion_uncalibrated() {
    network(2);
}

#[test]
fn full_network_concat_fusion() {
    network(3);
}
