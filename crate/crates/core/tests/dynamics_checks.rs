//! Discrete Jacobians against central differences, and long-run attitude normalization.

mod support;

use support::jacobian::{jacobian_check, norm_drift};

#[test]
fn jacobians_match_central_differences() {
    let worst = jacobian_check(21, 200);
    assert!(worst < 1e-5, "worst infinity-norm error {worst:e}");
}

#[test]
fn attitude_stays_unit_over_long_runs() {
    let worst = norm_drift(3, 10_000);
    assert!(worst < 1e-9, "norm drift {worst:e}");
}
