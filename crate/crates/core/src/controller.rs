//! Receding-horizon controller: alternating prediction QP and weight update.
//!
//! Each tick runs up to `alternations` rounds of
//! 1. build the shooting QP around the prediction, solve it, step the prediction;
//! 2. if adaptation is enabled, recompute the state weights in closed form from the
//!    QP step and broadcast them to every stage.
//!
//! The first predicted input is applied and the prediction is shifted by one stage
//! to warm-start the next tick. With `adapt = None` and one alternation this is the
//! plain real-time iteration scheme with fixed weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{update_weights, AdaptConfig, AdaptError, ErrorAggregate};
use crate::dynamics::{Control, ControlLimits, State, StateVector};
use crate::qp::{QpError, QpSettings};
use crate::reference::ReferencePoint;
use crate::transcription::{
    apply_step, build_qp, solve_qp, DynamicsModel, PredictionTrajectory, TranscriptionError,
    WeightVector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error("QP failed in round {round}: {source}")]
    Qp { round: usize, source: QpError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub dt: f64,
    pub alpha: f64,
    /// `None` gives the fixed-weight baseline.
    pub adapt: Option<AdaptConfig>,
    pub fixed_weights: WeightVector,
    pub limits: ControlLimits,
    pub alternations: usize,
    pub conv_tol: f64,
    /// Run the weight update after every round rather than only after the last one.
    pub adapt_every_round: bool,
    pub qp: QpSettingsConfig,
}

/// Serializable mirror of [`QpSettings`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettingsConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl From<QpSettingsConfig> for QpSettings {
    fn from(c: QpSettingsConfig) -> Self {
        QpSettings {
            max_iterations: c.max_iterations,
            tolerance: c.tolerance,
        }
    }
}

impl Default for QpSettingsConfig {
    fn default() -> Self {
        let s = QpSettings::default();
        Self {
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
        }
    }
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon: 19,
            dt: 0.05,
            alpha: 1.0,
            adapt: None,
            fixed_weights: WeightVector::default(),
            limits: ControlLimits::default(),
            alternations: 2,
            conv_tol: 1e-4,
            adapt_every_round: true,
            qp: QpSettingsConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.horizon < 2 {
            return Err(ControllerError::Config(format!(
                "horizon must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ControllerError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ControllerError::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.alternations == 0 {
            return Err(ControllerError::Config("alternations must be >= 1".into()));
        }
        if self.conv_tol.is_nan() || self.conv_tol < 0.0 {
            return Err(ControllerError::Config(
                "conv_tol must be non-negative".into(),
            ));
        }
        self.fixed_weights.validate()?;
        self.limits
            .validate()
            .map_err(|e| ControllerError::Config(e.to_string()))?;
        if let Some(a) = &self.adapt {
            a.validate_for_horizon(self.horizon)?;
        }
        Ok(())
    }

    pub fn is_adaptive(&self) -> bool {
        self.adapt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub pred: PredictionTrajectory,
    pub weights: WeightVector,
    /// Last command issued; held when a tick fails.
    pub last_command: Option<Control>,
    /// Set after a failure: the next tick restarts the prediction from the reference.
    pub reset_pending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundDiagnostics {
    pub kkt_residual: f64,
    pub step_norm: f64,
    pub qp_iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickDiagnostics {
    pub rounds: Vec<RoundDiagnostics>,
    pub q: StateVector,
    pub converged: bool,
}

impl TickDiagnostics {
    /// Largest KKT residual over the rounds of this tick.
    pub fn max_kkt(&self) -> f64 {
        self.rounds
            .iter()
            .map(|r| r.kkt_residual)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub command: Control,
    pub diagnostics: TickDiagnostics,
}

/// A failed tick: the error, the command to hold, and what was recorded before failing.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct TickFailure {
    pub error: ControllerError,
    pub hold_command: Control,
    pub diagnostics: TickDiagnostics,
}

/// Prediction initialized to the reference window, weights to `cfg.fixed_weights`.
pub fn init_controller(
    cfg: &ControllerConfig,
    refs: &[ReferencePoint],
) -> Result<ControllerState, ControllerError> {
    cfg.validate()?;
    Ok(ControllerState {
        pred: PredictionTrajectory::from_reference(refs, cfg.horizon)?,
        weights: cfg.fixed_weights,
        last_command: None,
        reset_pending: false,
    })
}

/// Drop the first stage and append one forward step of the last stage.
fn shift_prediction<M: DynamicsModel>(
    model: &M,
    pred: &PredictionTrajectory,
    dt: f64,
) -> PredictionTrajectory {
    let n = pred.horizon();
    let last_u = pred.controls[n - 1];
    let last_x = pred.states[n];
    let appended = model.step(&last_x, &last_u, dt).unwrap_or(last_x);
    let mut states: Vec<State> = pred.states[1..].to_vec();
    states.push(appended);
    let mut controls: Vec<Control> = pred.controls[1..].to_vec();
    controls.push(last_u);
    PredictionTrajectory { states, controls }
}

/// One control tick.
#[allow(clippy::result_large_err)]
pub fn nmpc_tick<M: DynamicsModel>(
    model: &M,
    state: &mut ControllerState,
    x_meas: &State,
    refs: &[ReferencePoint],
    cfg: &ControllerConfig,
) -> Result<TickOutput, TickFailure> {
    let hold = |state: &ControllerState| {
        state
            .last_command
            .unwrap_or_else(|| refs.first().map_or(Control::hover(), |p| p.control))
    };
    let mut diag = TickDiagnostics {
        q: state.weights.q,
        ..Default::default()
    };
    let fail = |state: &mut ControllerState, error: ControllerError, diag: TickDiagnostics| {
        state.reset_pending = true;
        TickFailure {
            error,
            hold_command: cfg.limits.clamp(&hold(state)),
            diagnostics: diag,
        }
    };

    if state.reset_pending {
        match PredictionTrajectory::from_reference(refs, cfg.horizon) {
            Ok(p) => state.pred = p,
            Err(e) => return Err(fail(state, e.into(), diag)),
        }
        state.reset_pending = false;
    }
    let n = cfg.horizon;
    let qp_settings: QpSettings = cfg.qp.into();

    for round in 0..cfg.alternations {
        let stage_weights = vec![state.weights; n + 1];
        let prob = match build_qp(
            model,
            &state.pred,
            refs,
            &stage_weights,
            x_meas,
            &cfg.limits,
            cfg.alpha,
            cfg.dt,
        ) {
            Ok(p) => p,
            Err(e) => return Err(fail(state, e.into(), diag)),
        };
        let sol = match solve_qp(&prob, &qp_settings) {
            Ok(s) => s,
            Err(source) => return Err(fail(state, ControllerError::Qp { round, source }, diag)),
        };
        state.pred = apply_step(model, &state.pred, &sol, cfg.alpha, &cfg.limits);
        let step_norm = sol.step_norm();
        diag.rounds.push(RoundDiagnostics {
            kkt_residual: sol.kkt_residual,
            step_norm,
            qp_iterations: sol.iterations,
            objective: sol.objective,
        });
        let last_round = round + 1 == cfg.alternations || step_norm < cfg.conv_tol;

        if let Some(adapt) = &cfg.adapt {
            if cfg.adapt_every_round || last_round {
                let agg = ErrorAggregate::from_steps(
                    &sol.dx,
                    &prob.state_errors,
                    cfg.alpha,
                    adapt.sub_horizon,
                );
                match update_weights(&agg, adapt) {
                    Ok(q) => state.weights.q = q,
                    Err(e) => return Err(fail(state, e.into(), diag)),
                }
            }
        }
        if step_norm < cfg.conv_tol {
            diag.converged = true;
            break;
        }
    }

    let command = cfg.limits.clamp(&state.pred.controls[0]);
    state.pred = shift_prediction(model, &state.pred, cfg.dt);
    state.last_command = Some(command);
    diag.q = state.weights.q;
    Ok(TickOutput {
        command,
        diagnostics: diag,
    })
}

/// Fixed-weight tick: [`nmpc_tick`] with adaptation disabled.
#[allow(clippy::result_large_err)]
pub fn baseline_tick<M: DynamicsModel>(
    model: &M,
    state: &mut ControllerState,
    x_meas: &State,
    refs: &[ReferencePoint],
    cfg: &ControllerConfig,
) -> Result<TickOutput, TickFailure> {
    let cfg = ControllerConfig {
        adapt: None,
        ..*cfg
    };
    nmpc_tick(model, state, x_meas, refs, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::AdaptVariant;
    use crate::reference::Preset;
    use crate::transcription::Quadrotor;

    fn adaptive_cfg() -> ControllerConfig {
        ControllerConfig {
            horizon: 10,
            adapt: Some(AdaptConfig {
                lambda: 1.0,
                sub_horizon: 4,
                variant: AdaptVariant::Exponential,
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ControllerConfig::default();
        assert!(c.validate().is_ok());
        c.horizon = 1;
        assert!(c.validate().is_err());
        let mut c = adaptive_cfg();
        c.adapt.as_mut().unwrap().sub_horizon = 11;
        assert!(c.validate().is_err());
        let c = ControllerConfig {
            alternations: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_copies_reference_and_weights() {
        let cfg = ControllerConfig::default();
        let tr = Preset::Circle.build(cfg.dt).unwrap();
        let w = tr.window(0, cfg.horizon + 1);
        let st = init_controller(&cfg, &w).unwrap();
        assert_eq!(st.weights, cfg.fixed_weights);
        assert_eq!(st.pred.states[3], w[3].state);
        assert!(init_controller(&cfg, &w[..5]).is_err());
    }

    #[test]
    fn shift_drops_first_stage() {
        let cfg = ControllerConfig::default();
        let tr = Preset::Agg1.build(cfg.dt).unwrap();
        let w = tr.window(0, cfg.horizon + 1);
        let st = init_controller(&cfg, &w).unwrap();
        let shifted = shift_prediction(&Quadrotor, &st.pred, cfg.dt);
        assert_eq!(shifted.states[0], st.pred.states[1]);
        assert_eq!(shifted.controls.len(), cfg.horizon);
        assert_eq!(
            shifted.controls[cfg.horizon - 1],
            st.pred.controls[cfg.horizon - 1]
        );
    }

    #[test]
    fn failure_holds_previous_command() {
        let cfg = ControllerConfig {
            qp: QpSettingsConfig {
                max_iterations: 0,
                tolerance: 1e-6,
            },
            ..Default::default()
        };
        let tr = Preset::Circle.build(cfg.dt).unwrap();
        let w = tr.window(0, cfg.horizon + 1);
        let mut st = init_controller(&cfg, &w).unwrap();
        let previous = Control::new(9.0, nalgebra::Vector3::new(0.1, 0.0, 0.0));
        st.last_command = Some(previous);
        let err = nmpc_tick(&Quadrotor, &mut st, &w[0].state, &w, &cfg).unwrap_err();
        assert_eq!(err.hold_command, previous);
        assert!(st.reset_pending);
    }
}
