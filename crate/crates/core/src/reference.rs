//! Reference trajectories: circle, diamond and two aggressive spline presets.
//!
//! Every generator produces position, velocity and acceleration samples on a
//! fixed time grid. [`derive_reference_controls`] then turns them into full
//! reference states and inputs through the differential-flatness map with zero yaw.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{quat_conjugate, quat_multiply, Control, State, GRAVITY};

/// Speed bound used to validate sample-to-sample continuity.
pub const DEFAULT_V_MAX: f64 = 6.0;

const FREE_FALL_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("reference acceleration cancels gravity at t = {0} s (free fall)")]
    FreeFall(f64),
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("spline system is singular")]
    Singular,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub t: f64,
    pub state: State,
    pub control: Control,
}

/// Position and its first two derivatives at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub name: String,
    pub dt: f64,
    pub points: Vec<ReferencePoint>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.t) - self.points.first().map_or(0.0, |p| p.t)
    }

    /// Checks length, time monotonicity and that adjacent positions are closer than `v_max * dt`.
    pub fn validate(&self, v_max: f64) -> Result<(), ReferenceError> {
        if self.points.len() < 2 {
            return Err(ReferenceError::Invalid("fewer than 2 points".into()));
        }
        for (i, w) in self.points.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(ReferenceError::Invalid(format!(
                    "time not increasing at {i}"
                )));
            }
            let gap = (w[1].state.position - w[0].state.position).norm();
            if gap >= v_max * self.dt {
                return Err(ReferenceError::Invalid(format!(
                    "position jump {gap:.3} m at {i} exceeds v_max * dt"
                )));
            }
        }
        for p in &self.points {
            if !p.state.is_finite() || !p.control.is_finite() {
                return Err(ReferenceError::Invalid("non-finite sample".into()));
            }
            if (p.state.attitude.norm() - 1.0).abs() > 1e-9 {
                return Err(ReferenceError::Invalid("non-unit attitude".into()));
            }
        }
        Ok(())
    }

    /// True for a closed path that is still moving at its end, like a circle lap.
    pub fn is_periodic(&self) -> bool {
        let (Some(first), Some(last)) = (self.points.first(), self.points.last()) else {
            return false;
        };
        self.points.len() >= 3
            && last.state.velocity.norm() > 1e-6
            && (last.state.position - first.state.position).norm() < 1e-6
            && (last.state.velocity - first.state.velocity).norm() < 1e-6
    }

    /// `len` points starting at index `start`. Past the end a periodic trajectory wraps
    /// around; any other holds its final point.
    pub fn window(&self, start: usize, len: usize) -> Vec<ReferencePoint> {
        let last = self.points.len() - 1;
        let wrap = self.is_periodic();
        (start..start + len)
            .map(|i| {
                if i <= last {
                    self.points[i]
                } else if wrap {
                    let mut p = self.points[(i - last) % last];
                    p.t = self.points[last].t + (i - last) as f64 * self.dt;
                    p
                } else {
                    self.points[last]
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReferenceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for p in &self.points {
            let s = &p.state;
            let u = &p.control;
            let row = [
                p.t,
                s.position.x,
                s.position.y,
                s.position.z,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                s.attitude[0],
                s.attitude[1],
                s.attitude[2],
                s.attitude[3],
                u.thrust,
                u.body_rates.x,
                u.body_rates.y,
                u.body_rates.z,
            ];
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Self::write_csv`]; lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(input: R, name: &str) -> Result<Self, ReferenceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(ReferenceError::Invalid(format!(
                "unexpected header {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ReferenceError::Invalid(format!("bad number: {e}")))?;
            if v.len() != CSV_HEADER.len() {
                return Err(ReferenceError::Invalid("wrong column count".into()));
            }
            points.push(ReferencePoint {
                t: v[0],
                state: State::new(
                    Vector3::new(v[1], v[2], v[3]),
                    Vector3::new(v[4], v[5], v[6]),
                    Vector4::new(v[7], v[8], v[9], v[10]),
                ),
                control: Control::new(v[11], Vector3::new(v[12], v[13], v[14])),
            });
        }
        if points.len() < 2 {
            return Err(ReferenceError::Invalid("fewer than 2 points".into()));
        }
        let dt = points[1].t - points[0].t;
        Ok(Self {
            name: name.to_string(),
            dt,
            points,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ReferenceError> {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("file")
            .to_string();
        Self::read_csv(std::fs::File::open(path)?, &name)
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "q_w", "q_x", "q_y", "q_z", "c", "omega_x",
    "omega_y", "omega_z",
];

fn positive(name: &str, v: f64) -> Result<(), ReferenceError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(ReferenceError::Parameter(format!(
            "{name} must be positive, got {v}"
        )));
    }
    Ok(())
}

fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt).round() as usize + 1
}

/// Attitude with body z along `thrust_dir` and zero yaw.
fn zero_yaw_attitude(thrust_dir: &Vector3<f64>) -> Vector4<f64> {
    let zb = thrust_dir.normalize();
    let yc = Vector3::y();
    let xb = yc.cross(&zb).normalize();
    let yb = zb.cross(&xb);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[xb, yb, zb]));
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    let mut v = Vector4::new(q.w, q.i, q.j, q.k);
    if v[0] < 0.0 {
        v = -v;
    }
    v / v.norm()
}

/// Constant body rate that carries `from` onto `to` in `dt`.
fn body_rate_between(from: &Vector4<f64>, to: &Vector4<f64>, dt: f64) -> Vector3<f64> {
    let mut d = quat_multiply(&quat_conjugate(from), to);
    if d[0] < 0.0 {
        d = -d;
    }
    let axis = Vector3::new(d[1], d[2], d[3]);
    let s = axis.norm();
    if s < 1e-15 {
        return axis * (2.0 / dt);
    }
    let angle = 2.0 * s.atan2(d[0]);
    axis * (angle / (s * dt))
}

/// Flatness map with zero yaw: `c = |a + g e3|`, body z along `a + g e3`,
/// body rates from finite differences of consecutive attitudes.
pub fn derive_reference_controls(
    samples: &[FlatSample],
    dt: f64,
) -> Result<Vec<ReferencePoint>, ReferenceError> {
    positive("dt", dt)?;
    if samples.len() < 2 {
        return Err(ReferenceError::Parameter("need at least 2 samples".into()));
    }
    let mut attitudes = Vec::with_capacity(samples.len());
    let mut thrusts = Vec::with_capacity(samples.len());
    for s in samples {
        let f = s.acceleration + Vector3::new(0.0, 0.0, GRAVITY);
        let c = f.norm();
        if c < FREE_FALL_EPS {
            return Err(ReferenceError::FreeFall(s.t));
        }
        thrusts.push(c);
        attitudes.push(zero_yaw_attitude(&f));
    }
    let n = samples.len();
    let mut rates: Vec<Vector3<f64>> = (0..n - 1)
        .map(|i| body_rate_between(&attitudes[i], &attitudes[i + 1], dt))
        .collect();
    rates.push(rates[n - 2]);
    Ok((0..n)
        .map(|i| ReferencePoint {
            t: samples[i].t,
            state: State::new(samples[i].position, samples[i].velocity, attitudes[i]),
            control: Control::new(thrusts[i], rates[i]),
        })
        .collect())
}

fn finish(
    name: &str,
    dt: f64,
    samples: &[FlatSample],
) -> Result<ReferenceTrajectory, ReferenceError> {
    Ok(ReferenceTrajectory {
        name: name.to_string(),
        dt,
        points: derive_reference_controls(samples, dt)?,
    })
}

/// Constant-speed circle in the horizontal plane, starting at `[radius, 0, altitude]`.
pub fn gen_circle(
    radius: f64,
    period: f64,
    altitude: f64,
    dt: f64,
    laps: usize,
) -> Result<ReferenceTrajectory, ReferenceError> {
    positive("radius", radius)?;
    positive("period", period)?;
    positive("dt", dt)?;
    if laps == 0 || !altitude.is_finite() {
        return Err(ReferenceError::Parameter(
            "laps must be >= 1 and altitude finite".into(),
        ));
    }
    let w = 2.0 * std::f64::consts::PI / period;
    let n = sample_count(laps as f64 * period, dt);
    let samples: Vec<FlatSample> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let (s, c) = (w * t).sin_cos();
            FlatSample {
                t,
                position: Vector3::new(radius * c, radius * s, altitude),
                velocity: Vector3::new(-radius * w * s, radius * w * c, 0.0),
                acceleration: Vector3::new(-radius * w * w * c, -radius * w * w * s, 0.0),
            }
        })
        .collect();
    finish("circle", dt, &samples)
}

/// Degree-7 rest-to-rest blend `s(tau)` with zero first three derivatives at both ends.
fn smoothstep7(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    let t4 = t2 * t2;
    let s = t4 * (35.0 - 84.0 * t + 70.0 * t2 - 20.0 * t3);
    let ds = 140.0 * t3 - 420.0 * t4 + 420.0 * t4 * t - 140.0 * t4 * t2;
    let dds = 420.0 * t2 - 1680.0 * t3 + 2100.0 * t4 - 840.0 * t4 * t;
    (s, ds, dds)
}

/// Rhombus through four vertices at fixed altitude. Each edge is traversed with a
/// degree-7 blend, so the vehicle comes to rest at each vertex.
pub fn gen_diamond(
    side: f64,
    lap_time: f64,
    altitude: f64,
    dt: f64,
) -> Result<ReferenceTrajectory, ReferenceError> {
    positive("side", side)?;
    positive("lap_time", lap_time)?;
    positive("dt", dt)?;
    positive("altitude", altitude)?;
    let verts = diamond_vertices(side, altitude);
    let seg_t = lap_time / 4.0;
    let n = sample_count(lap_time, dt);
    let samples: Vec<FlatSample> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let seg = ((t / seg_t).floor() as usize).min(3);
            let tau = (t - seg as f64 * seg_t) / seg_t;
            let (a, b) = (verts[seg], verts[(seg + 1) % 4]);
            let d = b - a;
            let (s, ds, dds) = smoothstep7(tau);
            FlatSample {
                t,
                position: a + d * s,
                velocity: d * (ds / seg_t),
                acceleration: d * (dds / (seg_t * seg_t)),
            }
        })
        .collect();
    finish("diamond", dt, &samples)
}

pub fn diamond_vertices(side: f64, altitude: f64) -> [Vector3<f64>; 4] {
    let a = side / std::f64::consts::SQRT_2;
    [
        Vector3::new(a, 0.0, altitude),
        Vector3::new(0.0, a, altitude),
        Vector3::new(-a, 0.0, altitude),
        Vector3::new(0.0, -a, altitude),
    ]
}

/// Piecewise degree-7 polynomial through `waypoints`, at rest (zero velocity,
/// acceleration and jerk) at both ends and continuous up to the sixth derivative
/// at interior waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySpline {
    segment_times: Vec<f64>,
    /// `coeffs[seg][axis][j]`, in normalized time `s = tau / T_seg`.
    coeffs: Vec<[[f64; 8]; 3]>,
}

fn falling(j: usize, m: usize) -> f64 {
    if m > j {
        return 0.0;
    }
    ((j - m + 1)..=j).map(|v| v as f64).product()
}

impl PolySpline {
    pub fn fit(waypoints: &[Vector3<f64>], segment_times: &[f64]) -> Result<Self, ReferenceError> {
        if waypoints.len() < 2 {
            return Err(ReferenceError::Parameter(
                "need at least 2 waypoints".into(),
            ));
        }
        if segment_times.len() + 1 != waypoints.len() {
            return Err(ReferenceError::Parameter(format!(
                "{} waypoints need {} segment times, got {}",
                waypoints.len(),
                waypoints.len() - 1,
                segment_times.len()
            )));
        }
        for &t in segment_times {
            positive("segment time", t)?;
        }
        let m = segment_times.len();
        let n = 8 * m;
        let mut mat = DMatrix::<f64>::zeros(n, n);
        // one row per (segment boundary, derivative) pair; row order fixed, rhs per axis
        let mut rhs_idx: Vec<Option<usize>> = Vec::with_capacity(n);
        let mut row = 0;
        let put =
            |row: usize, seg: usize, s: f64, deriv: usize, scale: f64, mat: &mut DMatrix<f64>| {
                for j in deriv..8 {
                    mat[(row, 8 * seg + j)] +=
                        scale * falling(j, deriv) * s.powi((j - deriv) as i32);
                }
            };
        // start at rest
        put(row, 0, 0.0, 0, 1.0, &mut mat);
        rhs_idx.push(Some(0));
        row += 1;
        for d in 1..=3 {
            put(row, 0, 0.0, d, 1.0, &mut mat);
            rhs_idx.push(None);
            row += 1;
        }
        for i in 1..m {
            put(row, i - 1, 1.0, 0, 1.0, &mut mat);
            rhs_idx.push(Some(i));
            row += 1;
            put(row, i, 0.0, 0, 1.0, &mut mat);
            rhs_idx.push(Some(i));
            row += 1;
            let (tl, tr) = (segment_times[i - 1], segment_times[i]);
            for d in 1..=6 {
                // derivative in real time, multiplied through by tr^d for conditioning
                put(row, i - 1, 1.0, d, (tr / tl).powi(d as i32), &mut mat);
                put(row, i, 0.0, d, -1.0, &mut mat);
                rhs_idx.push(None);
                row += 1;
            }
        }
        put(row, m - 1, 1.0, 0, 1.0, &mut mat);
        rhs_idx.push(Some(m));
        row += 1;
        for d in 1..=3 {
            put(row, m - 1, 1.0, d, 1.0, &mut mat);
            rhs_idx.push(None);
            row += 1;
        }
        debug_assert_eq!(row, n);

        let lu = mat.clone().full_piv_lu();
        let mut coeffs = vec![[[0.0; 8]; 3]; m];
        for axis in 0..3 {
            let rhs = DVector::from_iterator(
                n,
                rhs_idx
                    .iter()
                    .map(|r| r.map_or(0.0, |w| waypoints[w][axis])),
            );
            let sol = lu.solve(&rhs).ok_or(ReferenceError::Singular)?;
            if (&mat * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                return Err(ReferenceError::Singular);
            }
            for seg in 0..m {
                for j in 0..8 {
                    coeffs[seg][axis][j] = sol[8 * seg + j];
                }
            }
        }
        Ok(Self {
            segment_times: segment_times.to_vec(),
            coeffs,
        })
    }

    pub fn duration(&self) -> f64 {
        self.segment_times.iter().sum()
    }

    pub fn segment_times(&self) -> &[f64] {
        &self.segment_times
    }

    /// `deriv`-th time derivative of segment `seg` at local time `tau`.
    pub fn eval_segment(&self, seg: usize, tau: f64, deriv: usize) -> Vector3<f64> {
        let ts = self.segment_times[seg];
        let s = tau / ts;
        let scale = ts.powi(-(deriv as i32));
        Vector3::from_fn(|axis, _| {
            let c = &self.coeffs[seg][axis];
            (deriv..8)
                .map(|j| c[j] * falling(j, deriv) * s.powi((j - deriv) as i32))
                .sum::<f64>()
                * scale
        })
    }

    pub fn eval(&self, t: f64, deriv: usize) -> Vector3<f64> {
        let mut start = 0.0;
        let last = self.segment_times.len() - 1;
        for (seg, &ts) in self.segment_times.iter().enumerate() {
            if t < start + ts || seg == last {
                return self.eval_segment(seg, (t - start).clamp(0.0, ts), deriv);
            }
            start += ts;
        }
        unreachable!()
    }
}

/// Spline through `waypoints`, sampled at `dt`.
pub fn gen_aggressive(
    waypoints: &[Vector3<f64>],
    segment_times: &[f64],
    dt: f64,
) -> Result<ReferenceTrajectory, ReferenceError> {
    positive("dt", dt)?;
    let spline = PolySpline::fit(waypoints, segment_times)?;
    let n = sample_count(spline.duration(), dt);
    let samples: Vec<FlatSample> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            FlatSample {
                t,
                position: spline.eval(t, 0),
                velocity: spline.eval(t, 1),
                acceleration: spline.eval(t, 2),
            }
        })
        .collect();
    finish("aggressive", dt, &samples)
}

/// The four shipped reference trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Agg1,
    Agg2,
    Circle,
    Diamond,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Agg1, Preset::Agg2, Preset::Circle, Preset::Diamond];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Agg1 => "agg1",
            Preset::Agg2 => "agg2",
            Preset::Circle => "circle",
            Preset::Diamond => "diamond",
        }
    }

    /// Row label used in rendered tables.
    pub fn label(&self) -> &'static str {
        match self {
            Preset::Agg1 => "T1",
            Preset::Agg2 => "T2",
            Preset::Circle => "T3",
            Preset::Diamond => "T4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn waypoints(&self) -> (Vec<Vector3<f64>>, Vec<f64>) {
        match self {
            Preset::Agg1 => (
                vec![
                    Vector3::new(0.0, 0.0, 1.0),
                    Vector3::new(3.0, 2.5, 2.0),
                    Vector3::new(6.0, 0.0, 2.6),
                    Vector3::new(3.0, -2.5, 2.0),
                    Vector3::new(0.0, 0.0, 1.0),
                ],
                vec![1.6, 1.4, 1.4, 1.6],
            ),
            Preset::Agg2 => (
                vec![
                    Vector3::new(0.0, 0.0, 1.5),
                    Vector3::new(2.0, 1.5, 1.2),
                    Vector3::new(4.0, -1.5, 2.0),
                    Vector3::new(6.0, 1.5, 1.2),
                    Vector3::new(8.0, 0.0, 1.5),
                ],
                vec![1.4, 1.2, 1.2, 1.4],
            ),
            // not waypoint-based
            Preset::Circle | Preset::Diamond => (Vec::new(), Vec::new()),
        }
    }

    pub fn build(&self, dt: f64) -> Result<ReferenceTrajectory, ReferenceError> {
        let mut traj = match self {
            Preset::Circle => gen_circle(2.0, 6.0, 1.5, dt, 1)?,
            Preset::Diamond => gen_diamond(2.0, 8.0, 1.5, dt)?,
            Preset::Agg1 | Preset::Agg2 => {
                let (w, t) = self.waypoints();
                gen_aggressive(&w, &t, dt)?
            }
        };
        traj.name = self.name().to_string();
        Ok(traj)
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
