//! Online weight-adaptive nonlinear MPC for quadrotor trajectory tracking.
//!
//! The controller alternates between a structured tracking QP (real-time iteration
//! around a multiple-shooting prediction) and a closed-form update of the diagonal
//! state weights. The crate also ships the quadrotor model, reference generators,
//! a closed-loop simulator and the benchmark grids used by the CLI.

pub mod adaptation;
pub mod controller;
pub mod dynamics;
pub mod harness;
pub mod qp;
pub mod reference;
pub mod transcription;

pub use adaptation::{AdaptConfig, AdaptVariant};
pub use controller::{
    baseline_tick, init_controller, nmpc_tick, ControllerConfig, ControllerState, TickOutput,
};
pub use dynamics::{Control, ControlLimits, State};
pub use reference::{Preset, ReferencePoint, ReferenceTrajectory};
pub use transcription::{DynamicsModel, Quadrotor, WeightVector};
