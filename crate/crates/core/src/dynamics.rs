//! Quadrotor model with mass-normalized collective thrust and body-rate inputs.
//!
//! The state is `[p_WB; v_WB; q_WB]` (10 coordinates, quaternion scalar-first),
//! the input is `[c; omega_B]`. The continuous model is
//!
//! ```text
//! p' = v
//! v' = g_W + q (.) [0, 0, c]
//! q' = 1/2 Lambda(omega) q
//! ```
//!
//! The discrete map used everywhere else in the crate is one classical RK4 step
//! followed by quaternion renormalization. [`linearize_discrete`] returns the exact
//! Jacobians of that map (chain rule through the four stages and the normalization).

use nalgebra::{Matrix3x4, Matrix4, Matrix4x3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 10;
pub const CONTROL_DIM: usize = 4;
pub const GRAVITY: f64 = 9.81;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type ControlVector = SVector<f64, CONTROL_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, CONTROL_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("integration step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("invalid control limits: {0}")]
    InvalidLimits(String),
}

/// Vehicle state: world-frame position and velocity, body-to-world attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Scalar-first `[w, x, y, z]`.
    pub attitude: Vector4<f64>,
}

impl State {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, attitude: Vector4<f64>) -> Self {
        Self {
            position,
            velocity,
            attitude,
        }
    }

    /// Hovering at `position` with identity attitude.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self::new(position, Vector3::zeros(), identity_quaternion())
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        x.fixed_rows_mut::<4>(6).copy_from(&self.attitude);
        x
    }

    /// Raw conversion; the quaternion is taken as-is.
    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            position: x.fixed_rows::<3>(0).into_owned(),
            velocity: x.fixed_rows::<3>(3).into_owned(),
            attitude: x.fixed_rows::<4>(6).into_owned(),
        }
    }

    /// Conversion followed by quaternion renormalization.
    pub fn from_vector_normalized(x: &StateVector) -> Self {
        let mut s = Self::from_vector(x);
        s.normalize_attitude();
        s
    }

    pub fn normalize_attitude(&mut self) {
        let n = self.attitude.norm();
        if n > 0.0 {
            self.attitude /= n;
        } else {
            self.attitude = identity_quaternion();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Mass-normalized collective thrust (m/s^2) and body rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub thrust: f64,
    pub body_rates: Vector3<f64>,
}

impl Control {
    pub fn new(thrust: f64, body_rates: Vector3<f64>) -> Self {
        Self { thrust, body_rates }
    }

    pub fn hover() -> Self {
        Self::new(GRAVITY, Vector3::zeros())
    }

    pub fn to_vector(&self) -> ControlVector {
        ControlVector::new(
            self.thrust,
            self.body_rates.x,
            self.body_rates.y,
            self.body_rates.z,
        )
    }

    pub fn from_vector(u: &ControlVector) -> Self {
        Self::new(u[0], Vector3::new(u[1], u[2], u[3]))
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.body_rates.iter().all(|v| v.is_finite())
    }
}

/// Box limits on thrust and body rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub rate_min: Vector3<f64>,
    pub rate_max: Vector3<f64>,
}

impl ControlLimits {
    pub fn new(
        thrust_min: f64,
        thrust_max: f64,
        rate_min: Vector3<f64>,
        rate_max: Vector3<f64>,
    ) -> Result<Self, DynamicsError> {
        let limits = Self {
            thrust_min,
            thrust_max,
            rate_min,
            rate_max,
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let lo = self.lower();
        let hi = self.upper();
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite("control limits"));
        }
        if self.thrust_min < 0.0 {
            return Err(DynamicsError::InvalidLimits(format!(
                "thrust_min {} must be non-negative",
                self.thrust_min
            )));
        }
        for i in 0..CONTROL_DIM {
            if lo[i] >= hi[i] {
                return Err(DynamicsError::InvalidLimits(format!(
                    "lower bound {} not below upper bound {} for input {i}",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(())
    }

    pub fn lower(&self) -> ControlVector {
        ControlVector::new(
            self.thrust_min,
            self.rate_min.x,
            self.rate_min.y,
            self.rate_min.z,
        )
    }

    pub fn upper(&self) -> ControlVector {
        ControlVector::new(
            self.thrust_max,
            self.rate_max.x,
            self.rate_max.y,
            self.rate_max.z,
        )
    }

    pub fn clamp(&self, u: &Control) -> Control {
        let v = u.to_vector();
        Control::from_vector(
            &v.zip_zip_map(&self.lower(), &self.upper(), |x, lo, hi| x.clamp(lo, hi)),
        )
    }

    pub fn contains(&self, u: &Control, tol: f64) -> bool {
        let v = u.to_vector();
        let (lo, hi) = (self.lower(), self.upper());
        (0..CONTROL_DIM).all(|i| v[i] >= lo[i] - tol && v[i] <= hi[i] + tol)
    }
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            thrust_min: 2.0,
            thrust_max: 20.0,
            rate_min: Vector3::new(-6.0, -6.0, -3.0),
            rate_max: Vector3::new(6.0, 6.0, 3.0),
        }
    }
}

/// Discrete linearization of one shooting interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStage {
    pub a: StateMatrix,
    pub b: InputMatrix,
    /// Shooting defect `F(x_k, u_k) - x_{k+1}`; zero when produced by [`linearize_discrete`].
    pub defect: StateVector,
}

pub fn identity_quaternion() -> Vector4<f64> {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

/// Hamilton product `a * b`, scalar-first.
pub fn quat_multiply(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

pub fn quat_conjugate(q: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(q[0], -q[1], -q[2], -q[3])
}

/// Rotate `v` by `q`: computes `q * [0, v] * conj(q)`, which equals `R(q) v` for unit `q`.
pub fn quat_rotate(q: &Vector4<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let u = Vector3::new(x, y, z);
    // (w^2 - |u|^2) v + 2 (u.v) u + 2 w (u x v)
    (w * w - u.dot(&u)) * v + 2.0 * u.dot(v) * u + 2.0 * w * u.cross(v)
}

/// Third column of the (homogeneous) rotation matrix: the body z-axis in world frame.
fn thrust_axis(q: &Vector4<f64>) -> Vector3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Vector3::new(
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// d(thrust_axis)/dq, 3x4.
fn thrust_axis_jacobian(q: &Vector4<f64>) -> Matrix3x4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3x4::new(
        2.0 * y,
        2.0 * z,
        2.0 * w,
        2.0 * x,
        -2.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * y,
        2.0 * w,
        -2.0 * x,
        -2.0 * y,
        2.0 * z,
    )
}

/// Quaternion-rate matrix: `Lambda(omega) q = q * [0, omega]`.
pub fn rate_matrix(omega: &Vector3<f64>) -> Matrix4<f64> {
    let (p, q, r) = (omega.x, omega.y, omega.z);
    Matrix4::new(0.0, -p, -q, -r, p, 0.0, r, -q, q, -r, 0.0, p, r, q, -p, 0.0)
}

/// `q * [0, omega] = Xi(q) omega`.
fn rate_input_matrix(q: &Vector4<f64>) -> Matrix4x3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix4x3::new(-x, -y, -z, w, -z, y, z, w, -x, -y, x, w)
}

fn deriv_unchecked(x: &StateVector, u: &ControlVector) -> StateVector {
    let v: Vector3<f64> = x.fixed_rows::<3>(3).into_owned();
    let q: Vector4<f64> = x.fixed_rows::<4>(6).into_owned();
    let omega = Vector3::new(u[1], u[2], u[3]);
    let acc = Vector3::new(0.0, 0.0, -GRAVITY) + thrust_axis(&q) * u[0];
    let qdot = 0.5 * rate_matrix(&omega) * q;
    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&v);
    dx.fixed_rows_mut::<3>(3).copy_from(&acc);
    dx.fixed_rows_mut::<4>(6).copy_from(&qdot);
    dx
}

fn deriv_jacobians(x: &StateVector, u: &ControlVector) -> (StateMatrix, InputMatrix) {
    let q: Vector4<f64> = x.fixed_rows::<4>(6).into_owned();
    let omega = Vector3::new(u[1], u[2], u[3]);
    let mut fx = StateMatrix::zeros();
    fx.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    fx.fixed_view_mut::<3, 4>(3, 6)
        .copy_from(&(thrust_axis_jacobian(&q) * u[0]));
    fx.fixed_view_mut::<4, 4>(6, 6)
        .copy_from(&(0.5 * rate_matrix(&omega)));
    let mut fu = InputMatrix::zeros();
    fu.fixed_view_mut::<3, 1>(3, 0).copy_from(&thrust_axis(&q));
    fu.fixed_view_mut::<4, 3>(6, 1)
        .copy_from(&(0.5 * rate_input_matrix(&q)));
    (fx, fu)
}

fn check_inputs(x: &State, u: &Control) -> Result<(), DynamicsError> {
    if !x.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(DynamicsError::NonFinite("control"));
    }
    Ok(())
}

/// Continuous-time state derivative `f(x, u)`.
pub fn dynamics_deriv(x: &State, u: &Control) -> Result<StateVector, DynamicsError> {
    check_inputs(x, u)?;
    Ok(deriv_unchecked(&x.to_vector(), &u.to_vector()))
}

fn rk4_raw(x: &StateVector, u: &ControlVector, dt: f64) -> StateVector {
    let k1 = deriv_unchecked(x, u);
    let k2 = deriv_unchecked(&(x + k1 * (0.5 * dt)), u);
    let k3 = deriv_unchecked(&(x + k2 * (0.5 * dt)), u);
    let k4 = deriv_unchecked(&(x + k3 * dt), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

fn check_step(dt: f64) -> Result<(), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    Ok(())
}

/// One RK4 step with zero-order-held input, then quaternion renormalization.
pub fn integrate_step(x: &State, u: &Control, dt: f64) -> Result<State, DynamicsError> {
    check_step(dt)?;
    check_inputs(x, u)?;
    let next = rk4_raw(&x.to_vector(), &u.to_vector(), dt);
    let out = State::from_vector_normalized(&next);
    if !out.is_finite() {
        return Err(DynamicsError::NonFinite("integrated state"));
    }
    Ok(out)
}

/// Jacobians of [`integrate_step`] with respect to state and input, evaluated at `(x, u)`.
pub fn linearize_discrete(
    x: &State,
    u: &Control,
    dt: f64,
) -> Result<LinearizedStage, DynamicsError> {
    check_step(dt)?;
    check_inputs(x, u)?;
    let x0 = x.to_vector();
    let u0 = u.to_vector();
    let id = StateMatrix::identity();
    let h = dt;

    let k1 = deriv_unchecked(&x0, &u0);
    let (f1x, f1u) = deriv_jacobians(&x0, &u0);
    let (j1x, j1u) = (f1x, f1u);

    let x2 = x0 + k1 * (0.5 * h);
    let k2 = deriv_unchecked(&x2, &u0);
    let (f2x, f2u) = deriv_jacobians(&x2, &u0);
    let j2x = f2x * (id + j1x * (0.5 * h));
    let j2u = f2x * (j1u * (0.5 * h)) + f2u;

    let x3 = x0 + k2 * (0.5 * h);
    let k3 = deriv_unchecked(&x3, &u0);
    let (f3x, f3u) = deriv_jacobians(&x3, &u0);
    let j3x = f3x * (id + j2x * (0.5 * h));
    let j3u = f3x * (j2u * (0.5 * h)) + f3u;

    let x4 = x0 + k3 * h;
    let (f4x, f4u) = deriv_jacobians(&x4, &u0);
    let j4x = f4x * (id + j3x * h);
    let j4u = f4x * (j3u * h) + f4u;

    let y = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + deriv_unchecked(&x4, &u0)) * (h / 6.0);
    let mut a = id + (j1x + j2x * 2.0 + j3x * 2.0 + j4x) * (h / 6.0);
    let mut b = (j1u + j2u * 2.0 + j3u * 2.0 + j4u) * (h / 6.0);

    // normalization q -> q / |q|
    let q: Vector4<f64> = y.fixed_rows::<4>(6).into_owned();
    let n = q.norm();
    let qh = q / n;
    let dn = (Matrix4::identity() - qh * qh.transpose()) / n;
    let qa = dn * a.fixed_view::<4, STATE_DIM>(6, 0);
    a.fixed_view_mut::<4, STATE_DIM>(6, 0).copy_from(&qa);
    let qb = dn * b.fixed_view::<4, CONTROL_DIM>(6, 0);
    b.fixed_view_mut::<4, CONTROL_DIM>(6, 0).copy_from(&qb);

    Ok(LinearizedStage {
        a,
        b,
        defect: StateVector::zeros(),
    })
}
