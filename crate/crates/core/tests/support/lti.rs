//! Linear plant and an affine LQ tracking oracle for the fixed-weight controller.

use adaptive_nmpc::controller::{baseline_tick, init_controller, ControllerConfig};
use adaptive_nmpc::dynamics::{
    Control, ControlLimits, ControlVector, DynamicsError, InputMatrix, LinearizedStage, State,
    StateMatrix, StateVector,
};
use adaptive_nmpc::{DynamicsModel, ReferencePoint, WeightVector};
use nalgebra::{SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `x+ = A x + B u + c` on the raw 10/4 coordinates.
pub struct Lti {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub c: StateVector,
}

impl DynamicsModel for Lti {
    fn step(&self, x: &State, u: &Control, _dt: f64) -> Result<State, DynamicsError> {
        Ok(State::from_vector(
            &(self.a * x.to_vector() + self.b * u.to_vector() + self.c),
        ))
    }

    fn linearize(
        &self,
        _x: &State,
        _u: &Control,
        _dt: f64,
    ) -> Result<LinearizedStage, DynamicsError> {
        Ok(LinearizedStage {
            a: self.a,
            b: self.b,
            defect: StateVector::zeros(),
        })
    }
}

pub type Gain = SMatrix<f64, 4, 10>;

/// Minimizes sum_k |x_k - xr_k|_Q^2 + |u_k - ur_k|_R^2 + |x_N - xr_N|_Q^2 from `x0`.
pub fn riccati_tracking(
    m: &Lti,
    q: &StateVector,
    r: &ControlVector,
    xr: &[StateVector],
    ur: &[ControlVector],
    x0: &StateVector,
) -> (Vec<StateVector>, Vec<ControlVector>) {
    let n = ur.len();
    let qm = StateMatrix::from_diagonal(q);
    let rm = SMatrix::<f64, 4, 4>::from_diagonal(r);
    let mut p = qm;
    let mut pv = -(qm * xr[n]);
    let mut laws: Vec<(Gain, ControlVector)> = vec![(Gain::zeros(), ControlVector::zeros()); n];
    for k in (0..n).rev() {
        let bt_p = m.b.transpose() * p;
        let h = rm + bt_p * m.b;
        let h_inv = h.try_inverse().expect("positive definite");
        let gain = -(h_inv * bt_p * m.a);
        let ff = h_inv * (rm * ur[k] - bt_p * m.c - m.b.transpose() * pv);
        let f = m.a + m.b * gain;
        let fv = m.b * ff + m.c;
        let d = ff - ur[k];
        let p_new = qm + gain.transpose() * rm * gain + f.transpose() * p * f;
        let pv_new = -(qm * xr[k]) + gain.transpose() * rm * d + f.transpose() * (p * fv + pv);
        p = (p_new + p_new.transpose()) * 0.5;
        pv = pv_new;
        laws[k] = (gain, ff);
    }
    let mut xs = vec![*x0];
    let mut us = Vec::with_capacity(n);
    for (k, (gain, ff)) in laws.iter().enumerate() {
        let u = gain * xs[k] + ff;
        xs.push(m.a * xs[k] + m.b * u + m.c);
        us.push(u);
    }
    (xs, us)
}

/// Worst deviation of `baseline_tick` from the LQ tracking solution over five random
/// plants, from a prediction on the reference and from a perturbed one.
pub fn baseline_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let dt = 0.1;
        let b = InputMatrix::from_fn(|_, _| rng.random_range(-0.3..0.3));
        // inputs act around a large thrust offset so the lower bound at zero stays inactive
        let m = Lti {
            a: StateMatrix::identity() + StateMatrix::from_fn(|_, _| rng.random_range(-0.05..0.05)),
            b,
            c: StateVector::from_fn(|_, _| rng.random_range(-0.05..0.05))
                - b * ControlVector::new(5000.0, 0.0, 0.0, 0.0),
        };
        let n = 6 + trial;
        let q = StateVector::from_fn(|_, _| rng.random_range(0.5..3.0));
        let r = ControlVector::from_fn(|_, _| rng.random_range(0.2..2.0));
        let refs: Vec<ReferencePoint> = (0..=n)
            .map(|k| ReferencePoint {
                t: k as f64 * dt,
                state: State::from_vector(&StateVector::from_fn(|i, _| {
                    (0.3 * k as f64 + i as f64).sin()
                })),
                control: Control::new(
                    5000.0 + rng.random_range(-1.0..1.0),
                    Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                ),
            })
            .collect();
        let cfg = ControllerConfig {
            horizon: n,
            dt,
            fixed_weights: WeightVector::new(q, r).unwrap(),
            limits: ControlLimits::new(
                0.0,
                1e4,
                Vector3::from_element(-1e4),
                Vector3::from_element(1e4),
            )
            .unwrap(),
            alternations: 80,
            conv_tol: 0.0,
            ..ControllerConfig::default()
        };
        let x_meas = State::from_vector(
            &(refs[0].state.to_vector() + StateVector::from_fn(|_, _| rng.random_range(-0.5..0.5))),
        );

        let mut st = init_controller(&cfg, &refs).unwrap();
        let out = baseline_tick(&m, &mut st, &x_meas, &refs, &cfg).unwrap();

        let xr: Vec<StateVector> = refs.iter().map(|p| p.state.to_vector()).collect();
        let ur: Vec<ControlVector> = refs[..n].iter().map(|p| p.control.to_vector()).collect();
        let (xs, us) = riccati_tracking(&m, &q, &r, &xr, &ur, &x_meas.to_vector());

        let du = (out.command.to_vector() - us[0]).amax();
        worst = worst.max(du);
        // after the tick the prediction is shifted by one stage
        for k in 0..n {
            let dx = (st.pred.states[k].to_vector() - xs[k + 1]).amax();
            worst = worst.max(dx);
        }
        for k in 0..n - 1 {
            let du = (st.pred.controls[k].to_vector() - us[k + 1]).amax();
            worst = worst.max(du);
        }

        // from a prediction away from the reference the rounds must still reach the optimum
        let mut st = init_controller(&cfg, &refs).unwrap();
        for x in &mut st.pred.states {
            *x = State::from_vector(
                &(x.to_vector() + StateVector::from_fn(|_, _| rng.random_range(-1.0..1.0))),
            );
        }
        for u in &mut st.pred.controls {
            u.thrust += rng.random_range(-10.0..10.0);
        }
        let out = baseline_tick(&m, &mut st, &x_meas, &refs, &cfg).unwrap();
        let du = (out.command.to_vector() - us[0]).amax();
        worst = worst.max(du);
    }
    worst
}
