//! Finite-difference and long-run checks of the discrete model.

use adaptive_nmpc::dynamics::{
    integrate_step, linearize_discrete, Control, ControlVector, State, StateMatrix, StateVector,
    CONTROL_DIM, STATE_DIM,
};
use nalgebra::{SMatrix, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_point(rng: &mut ChaCha8Rng) -> (State, Control) {
    let mut q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
    q /= q.norm();
    let x = State::new(
        Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
        Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
        q,
    );
    let u = Control::new(
        rng.random_range(2.0..20.0),
        Vector3::from_fn(|_, _| rng.random_range(-6.0..6.0)),
    );
    (x, u)
}

pub fn inf_norm<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    (0..R).map(|i| m.row(i).abs().sum()).fold(0.0, f64::max)
}

/// Worst infinity-norm gap between the analytic Jacobians and central differences over
/// `points` random states and inputs.
pub fn jacobian_check(seed: u64, points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.05;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (x, u) = random_point(&mut rng);
        let lin = linearize_discrete(&x, &u, dt).expect("finite point");
        let x0 = x.to_vector();
        let u0 = u.to_vector();
        let mut fd_a = StateMatrix::zeros();
        for j in 0..STATE_DIM {
            let mut e = StateVector::zeros();
            e[j] = h;
            let plus = integrate_step(&State::from_vector(&(x0 + e)), &u, dt)
                .expect("step")
                .to_vector();
            let minus = integrate_step(&State::from_vector(&(x0 - e)), &u, dt)
                .expect("step")
                .to_vector();
            fd_a.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        let mut fd_b = SMatrix::<f64, STATE_DIM, CONTROL_DIM>::zeros();
        for j in 0..CONTROL_DIM {
            let mut e = ControlVector::zeros();
            e[j] = h;
            let plus = integrate_step(&x, &Control::from_vector(&(u0 + e)), dt)
                .expect("step")
                .to_vector();
            let minus = integrate_step(&x, &Control::from_vector(&(u0 - e)), dt)
                .expect("step")
                .to_vector();
            fd_b.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        worst = worst.max(inf_norm(&(lin.a - fd_a)).max(inf_norm(&(lin.b - fd_b))));
    }
    worst
}

/// Largest deviation of the attitude norm from 1 over `steps` chained steps.
pub fn norm_drift(seed: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, _) = random_point(&mut rng);
    x.position = Vector3::zeros();
    x.velocity = Vector3::zeros();
    let mut worst: f64 = 0.0;
    for i in 0..steps {
        let w = Vector3::new(
            3.0 * (0.01 * i as f64).sin(),
            -2.0 * (0.013 * i as f64).cos(),
            rng.random_range(-3.0..3.0),
        );
        x = integrate_step(&x, &Control::new(9.81, w), 0.01).expect("step");
        worst = worst.max((x.attitude.norm() - 1.0).abs());
    }
    worst
}
