//! Multiple-shooting transcription of the tracking problem around a prediction.
//!
//! [`build_qp`] linearizes the discrete model along the current prediction and
//! assembles a [`ShootingProblem`]; [`solve_qp`] hands it to the structured solver
//! in [`crate::qp`]; [`apply_step`] moves the prediction along the returned step.
//!
//! The stage cost is `(dz_k + alpha l_k)' diag(q, r) dz_k` with
//! `l_k = [x_k^pr - x_r,k; u_k^pr - u_r,k]`, plus the same state term at the
//! terminal stage.

use nalgebra::{DMatrix, DVector, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    integrate_step, linearize_discrete, Control, ControlLimits, ControlVector, DynamicsError,
    LinearizedStage, State, StateVector, CONTROL_DIM, STATE_DIM,
};
use crate::qp::{QpError, QpSettings, QpStage, StructuredQp};
use crate::reference::ReferencePoint;

/// Floor applied to state weights before they enter the Hessian.
pub const Q_MIN: f64 = 1e-6;

pub type StageGradient = SVector<f64, { STATE_DIM + CONTROL_DIM }>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptionError {
    #[error("reference window has {got} points, horizon {horizon} needs {}", horizon + 1)]
    ShortWindow { got: usize, horizon: usize },
    #[error("prediction has {states} states and {controls} controls; expected N+1 and N")]
    PredictionShape { states: usize, controls: usize },
    #[error("expected {expected} stage weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("step size alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Diagonal state and input weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub q: StateVector,
    pub r: ControlVector,
}

impl WeightVector {
    pub fn new(q: StateVector, r: ControlVector) -> Result<Self, TranscriptionError> {
        let w = Self { q, r };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), TranscriptionError> {
        if self.q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TranscriptionError::Weights(format!(
                "state weights must be finite and non-negative: {:?}",
                self.q.as_slice()
            )));
        }
        if self.r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(TranscriptionError::Weights(format!(
                "input weights must be finite and positive: {:?}",
                self.r.as_slice()
            )));
        }
        Ok(())
    }

    /// State weights with the `Q_MIN` floor applied.
    pub fn regularized(&self) -> Self {
        Self {
            q: self.q.map(|v| v.max(Q_MIN)),
            r: self.r,
        }
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        Self {
            q: StateVector::repeat(1.0),
            r: ControlVector::repeat(1.0),
        }
    }
}

/// The model the transcription linearizes. Implemented by [`Quadrotor`]; tests plug
/// in linear systems through the same surface.
pub trait DynamicsModel: Sync {
    fn step(&self, x: &State, u: &Control, dt: f64) -> Result<State, DynamicsError>;

    fn linearize(&self, x: &State, u: &Control, dt: f64) -> Result<LinearizedStage, DynamicsError>;

    /// Map a raw coordinate update back onto the state manifold.
    fn project(&self, x: State) -> State {
        x
    }

    /// `a - b` in raw coordinates.
    fn difference(&self, a: &State, b: &State) -> StateVector {
        a.to_vector() - b.to_vector()
    }
}

/// The nominal quadrotor model of [`crate::dynamics`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadrotor;

impl DynamicsModel for Quadrotor {
    fn step(&self, x: &State, u: &Control, dt: f64) -> Result<State, DynamicsError> {
        integrate_step(x, u, dt)
    }

    fn linearize(&self, x: &State, u: &Control, dt: f64) -> Result<LinearizedStage, DynamicsError> {
        linearize_discrete(x, u, dt)
    }

    fn project(&self, mut x: State) -> State {
        x.normalize_attitude();
        x
    }

    /// Quaternions `q` and `-q` are the same attitude; `a` is flipped into `b`'s hemisphere.
    fn difference(&self, a: &State, b: &State) -> StateVector {
        let mut a = *a;
        if a.attitude.dot(&b.attitude) < 0.0 {
            a.attitude = -a.attitude;
        }
        a.to_vector() - b.to_vector()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrajectory {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

impl PredictionTrajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn check_shape(&self) -> Result<(), TranscriptionError> {
        if self.controls.is_empty() || self.states.len() != self.controls.len() + 1 {
            return Err(TranscriptionError::PredictionShape {
                states: self.states.len(),
                controls: self.controls.len(),
            });
        }
        Ok(())
    }

    /// Prediction equal to the first `horizon + 1` reference points.
    pub fn from_reference(
        window: &[ReferencePoint],
        horizon: usize,
    ) -> Result<Self, TranscriptionError> {
        if window.len() < horizon + 1 {
            return Err(TranscriptionError::ShortWindow {
                got: window.len(),
                horizon,
            });
        }
        Ok(Self {
            states: window[..=horizon].iter().map(|p| p.state).collect(),
            controls: window[..horizon].iter().map(|p| p.control).collect(),
        })
    }
}

/// One linearized subproblem around the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingProblem {
    /// `N` stages: Jacobians and shooting defects.
    pub stages: Vec<LinearizedStage>,
    /// `alpha * diag(q, r) * l_k` for `k = 0..N-1`.
    pub gradients: Vec<StageGradient>,
    /// `alpha * diag(q) * (x_N^pr - x_r,N)`.
    pub terminal_gradient: StateVector,
    /// State tracking errors `x_k^pr - x_r,k`, `k = 0..N`.
    pub state_errors: Vec<StateVector>,
    /// Regularized weights, `N + 1` entries (last one is terminal; its `r` is unused).
    pub weights: Vec<WeightVector>,
    pub initial_gap: StateVector,
    pub limits: ControlLimits,
    pub alpha: f64,
    /// Predicted inputs, used to express the box limits on the step.
    pub controls: Vec<ControlVector>,
}

impl ShootingProblem {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// The equivalent structured QP.
    pub fn to_structured(&self) -> StructuredQp {
        let lo = self.limits.lower();
        let hi = self.limits.upper();
        let n = self.horizon();
        let stages = (0..n)
            .map(|k| {
                let st = &self.stages[k];
                let w = &self.weights[k];
                let g = &self.gradients[k];
                QpStage {
                    a: DMatrix::from_column_slice(STATE_DIM, STATE_DIM, st.a.as_slice()),
                    b: DMatrix::from_column_slice(STATE_DIM, CONTROL_DIM, st.b.as_slice()),
                    defect: DVector::from_column_slice(st.defect.as_slice()),
                    q: DVector::from_column_slice(w.q.as_slice()),
                    q_lin: DVector::from_column_slice(&g.as_slice()[..STATE_DIM]),
                    r: DVector::from_column_slice(w.r.as_slice()),
                    r_lin: DVector::from_column_slice(&g.as_slice()[STATE_DIM..]),
                    du_lower: DVector::from_column_slice((lo - self.controls[k]).as_slice()),
                    du_upper: DVector::from_column_slice((hi - self.controls[k]).as_slice()),
                }
            })
            .collect();
        StructuredQp {
            initial: DVector::from_column_slice(self.initial_gap.as_slice()),
            stages,
            terminal_q: DVector::from_column_slice(self.weights[n].q.as_slice()),
            terminal_lin: DVector::from_column_slice(self.terminal_gradient.as_slice()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub dx: Vec<StateVector>,
    pub du: Vec<ControlVector>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
}

impl QpSolution {
    /// `max(|dx|_inf, |du|_inf)` over the horizon.
    pub fn step_norm(&self) -> f64 {
        let x = self.dx.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let u = self.du.iter().map(|v| v.amax()).fold(0.0, f64::max);
        x.max(u)
    }
}

/// Linearize around `pred` and assemble the tracking subproblem.
#[allow(clippy::too_many_arguments)]
pub fn build_qp<M: DynamicsModel>(
    model: &M,
    pred: &PredictionTrajectory,
    refs: &[ReferencePoint],
    weights: &[WeightVector],
    x_meas: &State,
    limits: &ControlLimits,
    alpha: f64,
    dt: f64,
) -> Result<ShootingProblem, TranscriptionError> {
    pred.check_shape()?;
    let n = pred.horizon();
    if refs.len() < n + 1 {
        return Err(TranscriptionError::ShortWindow {
            got: refs.len(),
            horizon: n,
        });
    }
    if weights.len() != n + 1 {
        return Err(TranscriptionError::WeightCount {
            expected: n + 1,
            got: weights.len(),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TranscriptionError::Alpha(alpha));
    }
    limits.validate()?;
    for w in weights {
        w.validate()?;
    }
    if !x_meas.is_finite() {
        return Err(DynamicsError::NonFinite("measured state").into());
    }
    let weights: Vec<WeightVector> = weights.iter().map(|w| w.regularized()).collect();

    let mut stages = Vec::with_capacity(n);
    let mut gradients = Vec::with_capacity(n);
    let mut state_errors = Vec::with_capacity(n + 1);
    for k in 0..n {
        let (x, u) = (&pred.states[k], &pred.controls[k]);
        let mut lin = model.linearize(x, u, dt)?;
        let next = model.step(x, u, dt)?;
        lin.defect = model.difference(&next, &pred.states[k + 1]);
        stages.push(lin);

        let ex = model.difference(x, &refs[k].state);
        let eu = u.to_vector() - refs[k].control.to_vector();
        let mut g = StageGradient::zeros();
        g.fixed_rows_mut::<STATE_DIM>(0)
            .copy_from(&(weights[k].q.component_mul(&ex) * alpha));
        g.fixed_rows_mut::<CONTROL_DIM>(STATE_DIM)
            .copy_from(&(weights[k].r.component_mul(&eu) * alpha));
        gradients.push(g);
        state_errors.push(ex);
    }
    let ex_n = model.difference(&pred.states[n], &refs[n].state);
    let terminal_gradient = weights[n].q.component_mul(&ex_n) * alpha;
    state_errors.push(ex_n);

    Ok(ShootingProblem {
        stages,
        gradients,
        terminal_gradient,
        state_errors,
        weights,
        initial_gap: model.difference(x_meas, &pred.states[0]),
        limits: *limits,
        alpha,
        controls: pred.controls.iter().map(|u| u.to_vector()).collect(),
    })
}

/// Solve the subproblem; fails when the solver does not certify its KKT residual.
pub fn solve_qp(prob: &ShootingProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let sol = prob.to_structured().solve(settings)?;
    Ok(QpSolution {
        dx: sol
            .dx
            .iter()
            .map(|v| StateVector::from_column_slice(v.as_slice()))
            .collect(),
        du: sol
            .du
            .iter()
            .map(|v| ControlVector::from_column_slice(v.as_slice()))
            .collect(),
        kkt_residual: sol.kkt_residual,
        objective: sol.objective,
        iterations: sol.iterations,
    })
}

/// `x^pr += alpha dx`, `u^pr += alpha du`, followed by projection onto the state
/// manifold and clamping of the inputs.
pub fn apply_step<M: DynamicsModel>(
    model: &M,
    pred: &PredictionTrajectory,
    sol: &QpSolution,
    alpha: f64,
    limits: &ControlLimits,
) -> PredictionTrajectory {
    let states = pred
        .states
        .iter()
        .zip(&sol.dx)
        .map(|(x, dx)| model.project(State::from_vector(&(x.to_vector() + dx * alpha))))
        .collect();
    let controls = pred
        .controls
        .iter()
        .zip(&sol.du)
        .map(|(u, du)| limits.clamp(&Control::from_vector(&(u.to_vector() + du * alpha))))
        .collect();
    PredictionTrajectory { states, controls }
}
