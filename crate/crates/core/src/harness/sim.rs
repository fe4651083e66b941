//! Closed-loop simulation and the single-point measurement corruption protocol.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{init_controller, nmpc_tick, ControllerConfig, ControllerError};
use crate::dynamics::{Control, DynamicsError, State, StateVector};
use crate::reference::{ReferencePoint, ReferenceTrajectory};
use crate::transcription::{DynamicsModel, Quadrotor};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("controller dt {controller} differs from trajectory dt {trajectory}")]
    StepMismatch { controller: f64, trajectory: f64 },
    #[error("invalid noise config: {0}")]
    Noise(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub runs: usize,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(HarnessError::Noise(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.runs == 0 {
            return Err(HarnessError::Noise("runs must be >= 1".into()));
        }
        Ok(())
    }

    /// Seed of run `k`.
    pub fn run_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }
}

/// How the simulated vehicle starts relative to the first reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    /// Added to the first reference position.
    pub position_offset: Vector3<f64>,
    /// Start hovering (zero velocity, level attitude) instead of on the reference state.
    pub at_rest: bool,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            position_offset: Vector3::new(0.5, -0.5, 0.3),
            at_rest: true,
        }
    }
}

impl InitialCondition {
    pub fn on_reference() -> Self {
        Self {
            position_offset: Vector3::zeros(),
            at_rest: false,
        }
    }

    pub fn initial_state(&self, first: &ReferencePoint) -> State {
        let mut x = if self.at_rest {
            State::at_rest(first.state.position)
        } else {
            first.state
        };
        x.position += self.position_offset;
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    /// Plant state at `t`, before `u_applied` acts.
    pub x_true: State,
    /// Measurement the controller saw this tick.
    pub x_meas: State,
    pub u_applied: Control,
    /// Reference point at the same time as `x_true`.
    pub reference: ReferencePoint,
    pub q: StateVector,
    pub kkt: f64,
    pub failed: bool,
}

impl SimRecord {
    /// `d_i`.
    pub fn position_error(&self) -> f64 {
        (self.x_true.position - self.reference.state.position).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub trajectory: String,
    pub records: Vec<SimRecord>,
    /// Tick whose measurement was corrupted, if any.
    pub noise_index: Option<usize>,
    pub failures: usize,
}

pub const LOG_HEADER: [&str; 23] = [
    "t", "px", "py", "pz", "prx", "pry", "prz", "c", "wx", "wy", "wz", "d_i", "kkt", "q0", "q1",
    "q2", "q3", "q4", "q5", "q6", "q7", "q8", "q9",
];

impl SimLog {
    pub fn controls(&self) -> Vec<Control> {
        self.records.iter().map(|r| r.u_applied).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the log table. Values use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LOG_HEADER)?;
        for r in &self.records {
            let p = r.x_true.position;
            let pr = r.reference.state.position;
            let u = r.u_applied;
            let mut row: Vec<String> = [
                r.t,
                p.x,
                p.y,
                p.z,
                pr.x,
                pr.y,
                pr.z,
                u.thrust,
                u.body_rates.x,
                u.body_rates.y,
                u.body_rates.z,
                r.position_error(),
                r.kkt,
            ]
            .iter()
            .map(|v| v.to_string())
            .collect();
            row.extend(r.q.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One parsed row of a log table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub reference: Vector3<f64>,
    /// `[c, wx, wy, wz]`.
    pub control: [f64; 4],
    pub d_i: f64,
}

/// Reads a table written by [`SimLog::write_csv`]. Lines starting with `#` are skipped.
pub fn read_log_csv<R: Read>(input: R) -> Result<Vec<LogRow>, HarnessError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = r.headers()?.clone();
    if header
        .iter()
        .take(12)
        .ne(LOG_HEADER.iter().take(12).copied())
    {
        return Err(HarnessError::Log(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let f = |j: usize| -> Result<f64, HarnessError> {
            rec.get(j)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    HarnessError::Log(format!("row {}: bad field {}", line + 1, LOG_HEADER[j]))
                })
        };
        rows.push(LogRow {
            t: f(0)?,
            position: Vector3::new(f(1)?, f(2)?, f(3)?),
            reference: Vector3::new(f(4)?, f(5)?, f(6)?),
            control: [f(7)?, f(8)?, f(9)?, f(10)?],
            d_i: f(11)?,
        });
    }
    Ok(rows)
}

/// `p' = p + sigma * nu` with `nu` isotropic Gaussian rescaled to `|nu| = |p|`
/// (unit norm when `p = 0`). Velocity and attitude are untouched.
pub fn inject_noise<R: Rng + ?Sized>(x: &State, sigma: f64, rng: &mut R) -> State {
    let mut nu = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let n = nu.norm();
    if n > 0.0 {
        nu /= n;
    } else {
        nu = Vector3::x();
    }
    let p_norm = x.position.norm();
    if p_norm > 0.0 {
        nu *= p_norm;
    }
    let mut out = *x;
    out.position += nu * sigma;
    out
}

/// Closed loop against the nominal quadrotor model.
pub fn run_closed_loop(
    traj: &ReferenceTrajectory,
    cfg: &ControllerConfig,
    init: &InitialCondition,
    noise: Option<f64>,
    seed: u64,
) -> Result<SimLog, HarnessError> {
    run_closed_loop_with(&Quadrotor, traj, cfg, init, noise, seed)
}

/// Closed loop with an arbitrary model used both as plant and as controller model.
pub fn run_closed_loop_with<M: DynamicsModel>(
    model: &M,
    traj: &ReferenceTrajectory,
    cfg: &ControllerConfig,
    init: &InitialCondition,
    noise_sigma: Option<f64>,
    seed: u64,
) -> Result<SimLog, HarnessError> {
    cfg.validate()?;
    if (cfg.dt - traj.dt).abs() > 1e-12 * traj.dt.max(1.0) {
        return Err(HarnessError::StepMismatch {
            controller: cfg.dt,
            trajectory: traj.dt,
        });
    }
    let l = traj.len();
    let n = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_index = match noise_sigma {
        Some(sigma) => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(HarnessError::Noise(format!(
                    "sigma must be >= 0, got {sigma}"
                )));
            }
            Some(rng.random_range(0..l))
        }
        None => None,
    };

    let mut ctrl = init_controller(cfg, &traj.window(0, n + 1))?;
    let mut x_true = init.initial_state(&traj.points[0]);
    let mut records = Vec::with_capacity(l);
    let mut failures = 0;
    for i in 0..l {
        let x_meas = match (noise_index, noise_sigma) {
            (Some(tau), Some(sigma)) if tau == i => inject_noise(&x_true, sigma, &mut rng),
            _ => x_true,
        };
        let window = traj.window(i, n + 1);
        let (command, q, kkt, failed) = match nmpc_tick(model, &mut ctrl, &x_meas, &window, cfg) {
            Ok(out) => (
                out.command,
                out.diagnostics.q,
                out.diagnostics.max_kkt(),
                false,
            ),
            Err(f) => {
                failures += 1;
                ctrl.last_command = Some(f.hold_command);
                (f.hold_command, ctrl.weights.q, f64::NAN, true)
            }
        };
        records.push(SimRecord {
            t: traj.points[i].t,
            x_true,
            x_meas,
            u_applied: command,
            reference: traj.points[i],
            q,
            kkt,
            failed,
        });
        x_true = model.step(&x_true, &command, cfg.dt)?;
    }
    Ok(SimLog {
        trajectory: traj.name.clone(),
        records,
        noise_index,
        failures,
    })
}
