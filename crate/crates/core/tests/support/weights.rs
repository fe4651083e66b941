//! Derivative-free minimizer of the weight objective.

use std::time::Instant;

use adaptive_nmpc::adaptation::{update_weights_linear, ErrorAggregate};
use adaptive_nmpc::dynamics::StateVector;
use adaptive_nmpc::{AdaptConfig, AdaptVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn objective(lambda: f64, v: &StateVector, q: &StateVector) -> f64 {
    lambda * q.dot(q) - v.dot(q)
}

/// Coordinate sweeps of bisection on the sign of a central-difference slope of the
/// objective, within `[lo, hi]` per coordinate.
pub fn numeric_minimizer(lambda: f64, v: &StateVector, lo: f64, hi: f64) -> StateVector {
    let mut q = StateVector::zeros();
    let h = 1e-3;
    for _sweep in 0..2 {
        for i in 0..q.len() {
            let slope = |q: &StateVector, x: f64| {
                let mut a = *q;
                let mut b = *q;
                a[i] = x + h;
                b[i] = x - h;
                objective(lambda, v, &a) - objective(lambda, v, &b)
            };
            let (mut a, mut b) = (lo, hi);
            if slope(&q, a) >= 0.0 {
                q[i] = a;
                continue;
            }
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if slope(&q, m) > 0.0 {
                    b = m;
                } else {
                    a = m;
                }
                if b - a < 1e-14 {
                    break;
                }
            }
            q[i] = 0.5 * (a + b);
        }
    }
    q
}

pub fn cfg(lambda: f64, variant: AdaptVariant) -> AdaptConfig {
    AdaptConfig {
        lambda,
        gamma: 0.0,
        sub_horizon: 1,
        variant,
        exp_clamp: 30.0,
    }
}

/// Worst deviation of the unprojected closed form from the numeric minimizer over
/// `trials` random aggregates, and the elapsed seconds.
pub fn closed_form_check(seed: u64, trials: usize) -> (f64, f64) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let lambda = rng.random_range(0.05..5.0);
        let agg = ErrorAggregate {
            v_sum: StateVector::from_fn(|_, _| rng.random_range(-10.0..10.0)),
        };
        let q =
            update_weights_linear(&agg, &cfg(lambda, AdaptVariant::Linear)).expect("valid config");
        let oracle = numeric_minimizer(lambda, &agg.v_sum, -1e3, 1e3);
        worst = worst.max((q - oracle).amax());
    }
    (worst, start.elapsed().as_secs_f64())
}
