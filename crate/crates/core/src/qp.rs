//! Structured QP solver for multiple-shooting subproblems.
//!
//! Problem form (horizon `N`, stages `k = 0..N-1`, terminal state `N`):
//!
//! ```text
//! min  sum_k [ dx_k' diag(q_k) dx_k + q_lin_k' dx_k + du_k' diag(r_k) du_k + r_lin_k' du_k ]
//!        + dx_N' diag(q_N) dx_N + q_lin_N' dx_N
//! s.t. dx_0 = initial
//!      dx_{k+1} = A_k dx_k + B_k du_k + d_k
//!      lo_k <= du_k <= hi_k
//! ```
//!
//! Equality-constrained subproblems are solved by a Riccati recursion in which
//! input components held at a bound are eliminated. A primal active-set loop over
//! the input bounds sits on top. Every step is a full Riccati pass, so the cost per
//! iteration is linear in `N`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("infeasible input bounds at stage {stage}, input {input}: {lower} > {upper}")]
    InfeasibleBounds {
        stage: usize,
        input: usize,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite problem data")]
    NonFinite,
    #[error("reduced Hessian not positive definite at stage {0}")]
    NotConvex(usize),
    #[error(
        "active-set loop did not converge in {iterations} iterations (KKT residual {residual:.3e})"
    )]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("KKT residual {residual:.3e} above tolerance {tolerance:.1e}")]
    Inaccurate { residual: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }
}

/// One stage of the structured QP. Cost matrices are diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QpStage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub defect: DVector<f64>,
    pub q: DVector<f64>,
    pub q_lin: DVector<f64>,
    pub r: DVector<f64>,
    pub r_lin: DVector<f64>,
    pub du_lower: DVector<f64>,
    pub du_upper: DVector<f64>,
}

impl QpStage {
    /// Stage with no bounds and zero linear terms.
    pub fn unconstrained(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        defect: DVector<f64>,
        q: DVector<f64>,
        r: DVector<f64>,
    ) -> Self {
        let nx = a.nrows();
        let nu = b.ncols();
        Self {
            a,
            b,
            defect,
            q,
            q_lin: DVector::zeros(nx),
            r,
            r_lin: DVector::zeros(nu),
            du_lower: DVector::from_element(nu, f64::NEG_INFINITY),
            du_upper: DVector::from_element(nu, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredQp {
    pub initial: DVector<f64>,
    pub stages: Vec<QpStage>,
    pub terminal_q: DVector<f64>,
    pub terminal_lin: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredSolution {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    /// Scaled max-violation of primal feasibility, stationarity and multiplier signs.
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Number of input bounds active at the solution.
    pub active_bounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

struct EqpResult {
    du: Vec<DVector<f64>>,
    dx: Vec<DVector<f64>>,
}

impl StructuredQp {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn state_dim(&self) -> usize {
        self.initial.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let nx = self.state_dim();
        if self.stages.is_empty() {
            return Err(QpError::Dimension("horizon must be at least 1".into()));
        }
        if self.terminal_q.len() != nx || self.terminal_lin.len() != nx {
            return Err(QpError::Dimension("terminal cost size".into()));
        }
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.initial) || !finite(&self.terminal_q) || !finite(&self.terminal_lin) {
            return Err(QpError::NonFinite);
        }
        for (k, s) in self.stages.iter().enumerate() {
            let nu = s.b.ncols();
            let ok = s.a.nrows() == nx
                && s.a.ncols() == nx
                && s.b.nrows() == nx
                && s.defect.len() == nx
                && s.q.len() == nx
                && s.q_lin.len() == nx
                && s.r.len() == nu
                && s.r_lin.len() == nu
                && s.du_lower.len() == nu
                && s.du_upper.len() == nu;
            if !ok {
                return Err(QpError::Dimension(format!("stage {k}")));
            }
            if !s.a.iter().chain(s.b.iter()).all(|x| x.is_finite())
                || !finite(&s.defect)
                || !finite(&s.q)
                || !finite(&s.q_lin)
                || !finite(&s.r)
                || !finite(&s.r_lin)
                || s.du_lower
                    .iter()
                    .chain(s.du_upper.iter())
                    .any(|x| x.is_nan())
            {
                return Err(QpError::NonFinite);
            }
            if s.q.iter().any(|&v| v < 0.0) || s.r.iter().any(|&v| v <= 0.0) {
                return Err(QpError::NotConvex(k));
            }
            for j in 0..nu {
                if s.du_lower[j] > s.du_upper[j] {
                    return Err(QpError::InfeasibleBounds {
                        stage: k,
                        input: j,
                        lower: s.du_lower[j],
                        upper: s.du_upper[j],
                    });
                }
            }
        }
        Ok(())
    }

    /// Objective value of a candidate trajectory.
    pub fn objective(&self, dx: &[DVector<f64>], du: &[DVector<f64>]) -> f64 {
        let mut f = 0.0;
        for (k, s) in self.stages.iter().enumerate() {
            f += quad_diag(&s.q, &dx[k]) + s.q_lin.dot(&dx[k]);
            f += quad_diag(&s.r, &du[k]) + s.r_lin.dot(&du[k]);
        }
        let n = self.horizon();
        f + quad_diag(&self.terminal_q, &dx[n]) + self.terminal_lin.dot(&dx[n])
    }

    /// States obtained by propagating the linearized dynamics from `initial`.
    pub fn rollout(&self, du: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut dx = Vec::with_capacity(self.horizon() + 1);
        dx.push(self.initial.clone());
        for (k, s) in self.stages.iter().enumerate() {
            let next = &s.a * &dx[k] + &s.b * &du[k] + &s.defect;
            dx.push(next);
        }
        dx
    }

    /// Input gradients of the Lagrangian, with costates from the backward adjoint pass.
    ///
    /// The returned scales bound the magnitude of the summands that enter each gradient,
    /// so the scaled residual stays meaningful when large weights cancel in the costates.
    fn input_gradients(
        &self,
        dx: &[DVector<f64>],
        du: &[DVector<f64>],
    ) -> (Vec<DVector<f64>>, Vec<f64>) {
        let n = self.horizon();
        let mut lam = 2.0 * self.terminal_q.component_mul(&dx[n]) + &self.terminal_lin;
        let mut lam_mag =
            (2.0 * self.terminal_q.component_mul(&dx[n])).abs() + self.terminal_lin.abs();
        let mut grads = vec![DVector::zeros(0); n];
        let mut scales = vec![0.0; n];
        for k in (0..n).rev() {
            let s = &self.stages[k];
            let quad = 2.0 * s.r.component_mul(&du[k]);
            let adj = s.b.transpose() * &lam;
            let adj_mag = s.b.abs().transpose() * &lam_mag;
            let scale = 1.0 + max_abs(&quad).max(max_abs(&s.r_lin)).max(max_abs(&adj_mag));
            grads[k] = quad + &s.r_lin + adj;
            scales[k] = scale;
            lam_mag = (2.0 * s.q.component_mul(&dx[k])).abs()
                + s.q_lin.abs()
                + s.a.abs().transpose() * lam_mag;
            lam = 2.0 * s.q.component_mul(&dx[k]) + &s.q_lin + s.a.transpose() * lam;
        }
        (grads, scales)
    }

    /// KKT residual of a candidate: dynamics and bound feasibility, plus scaled
    /// stationarity (free inputs) and multiplier-sign violation (inputs at a bound).
    pub fn kkt_residual(&self, dx: &[DVector<f64>], du: &[DVector<f64>]) -> f64 {
        let n = self.horizon();
        let mut res: f64 = max_abs(&(&dx[0] - &self.initial));
        for (k, s) in self.stages.iter().enumerate() {
            let pred = &s.a * &dx[k] + &s.b * &du[k] + &s.defect;
            let scale = 1.0 + max_abs(&dx[k + 1]);
            res = res.max(max_abs(&(pred - &dx[k + 1])) / scale);
        }
        let (grads, scales) = self.input_gradients(dx, du);
        for k in 0..n {
            let s = &self.stages[k];
            for j in 0..du[k].len() {
                let lo = s.du_lower[j];
                let hi = s.du_upper[j];
                let u = du[k][j];
                res = res.max(lo - u).max(u - hi);
                let g = grads[k][j] / scales[k];
                let tol = bound_tol(lo, hi);
                let at_lo = lo.is_finite() && (u - lo).abs() <= tol;
                let at_hi = hi.is_finite() && (u - hi).abs() <= tol;
                let viol = match (at_lo, at_hi) {
                    (true, true) => 0.0,
                    (true, false) => (-g).max(0.0),
                    (false, true) => g.max(0.0),
                    (false, false) => g.abs(),
                };
                res = res.max(viol);
            }
        }
        res
    }

    /// Riccati solve with the inputs in `bounds` that are not `Free` fixed to `fixed`.
    fn solve_eqp(
        &self,
        bounds: &[Vec<Bound>],
        fixed: &[DVector<f64>],
    ) -> Result<EqpResult, QpError> {
        let n = self.horizon();
        let mut p_mat = DMatrix::from_diagonal(&(2.0 * &self.terminal_q));
        let mut p_vec = self.terminal_lin.clone();
        let mut gains: Vec<(Vec<usize>, DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let s = &self.stages[k];
            let nu = s.b.ncols();
            let free: Vec<usize> = (0..nu).filter(|&j| bounds[k][j] == Bound::Free).collect();
            let mut affine = s.defect.clone();
            for j in 0..nu {
                if bounds[k][j] != Bound::Free {
                    affine += s.b.column(j) * fixed[k][j];
                }
            }
            let pe = &p_mat * &affine + &p_vec;
            let pa = &p_mat * &s.a;
            let mut p_next = DMatrix::from_diagonal(&(2.0 * &s.q)) + s.a.transpose() * &pa;
            let mut p_vec_next = &s.q_lin + s.a.transpose() * &pe;
            let (gain, ff) = if free.is_empty() {
                (DMatrix::zeros(0, s.a.ncols()), DVector::zeros(0))
            } else {
                let bf = s.b.select_columns(&free);
                let pbf = &p_mat * &bf;
                let mut quu = bf.transpose() * &pbf;
                for (i, &j) in free.iter().enumerate() {
                    quu[(i, i)] += 2.0 * s.r[j];
                }
                let qux = pbf.transpose() * &s.a;
                let qu = DVector::from_iterator(free.len(), free.iter().map(|&j| s.r_lin[j]))
                    + bf.transpose() * &pe;
                let chol = quu.cholesky().ok_or(QpError::NotConvex(k))?;
                let gain = -chol.solve(&qux);
                let ff = -chol.solve(&qu);
                p_next += qux.transpose() * &gain;
                p_vec_next += qux.transpose() * &ff;
                (gain, ff)
            };
            p_mat = 0.5 * (&p_next + p_next.transpose());
            p_vec = p_vec_next;
            gains.push((free, gain, ff));
        }
        gains.reverse();

        let mut dx = Vec::with_capacity(n + 1);
        let mut du = Vec::with_capacity(n);
        dx.push(self.initial.clone());
        for k in 0..n {
            let s = &self.stages[k];
            let (free, gain, ff) = &gains[k];
            let mut u = fixed[k].clone();
            for j in 0..u.len() {
                if bounds[k][j] == Bound::Free {
                    u[j] = 0.0;
                }
            }
            if !free.is_empty() {
                let uf = gain * &dx[k] + ff;
                for (i, &j) in free.iter().enumerate() {
                    u[j] = uf[i];
                }
            }
            let next = &s.a * &dx[k] + &s.b * &u + &s.defect;
            du.push(u);
            dx.push(next);
        }
        Ok(EqpResult { du, dx })
    }

    /// Solve the QP with a primal active-set method over the input bounds.
    ///
    /// The start point is the unconstrained minimizer projected onto the boxes, with the
    /// clamped inputs as the initial working set.
    pub fn solve(&self, settings: &QpSettings) -> Result<StructuredSolution, QpError> {
        self.validate()?;
        let zero: Vec<DVector<f64>> = self
            .stages
            .iter()
            .map(|s| DVector::zeros(s.b.ncols()))
            .collect();
        let fixed: Vec<Vec<Bound>> = self
            .stages
            .iter()
            .map(|s| {
                (0..s.b.ncols())
                    .map(|j| {
                        if s.du_lower[j] == s.du_upper[j] {
                            Bound::Lower
                        } else {
                            Bound::Free
                        }
                    })
                    .collect()
            })
            .collect();
        let free = self.solve_eqp(&fixed, &self.project_along(&zero, &zero, 0.0))?;
        let start = self.project_along(&zero, &free.du, 1.0);
        self.solve_primal(start, 1, settings)
    }

    /// `clamp(du + t (target - du))` onto the input boxes.
    fn project_along(
        &self,
        du: &[DVector<f64>],
        target: &[DVector<f64>],
        t: f64,
    ) -> Vec<DVector<f64>> {
        self.stages
            .iter()
            .enumerate()
            .map(|(k, s)| {
                DVector::from_iterator(
                    du[k].len(),
                    (0..du[k].len()).map(|j| {
                        (du[k][j] + t * (target[k][j] - du[k][j]))
                            .clamp(s.du_lower[j], s.du_upper[j])
                    }),
                )
            })
            .collect()
    }

    fn finish(
        &self,
        dx: Vec<DVector<f64>>,
        du: Vec<DVector<f64>>,
        kkt_residual: f64,
        iterations: usize,
    ) -> StructuredSolution {
        let objective = self.objective(&dx, &du);
        let active_bounds = self
            .stages
            .iter()
            .enumerate()
            .map(|(k, s)| {
                (0..du[k].len())
                    .filter(|&j| {
                        let tol = bound_tol(s.du_lower[j], s.du_upper[j]);
                        (du[k][j] - s.du_lower[j]).abs() <= tol
                            || (du[k][j] - s.du_upper[j]).abs() <= tol
                    })
                    .count()
            })
            .sum();
        StructuredSolution {
            dx,
            du,
            kkt_residual,
            objective,
            iterations,
            active_bounds,
        }
    }

    /// Classic primal active-set loop from a feasible `du`.
    fn solve_primal(
        &self,
        mut du: Vec<DVector<f64>>,
        start: usize,
        settings: &QpSettings,
    ) -> Result<StructuredSolution, QpError> {
        let n = self.horizon();
        let mut bounds: Vec<Vec<Bound>> = self
            .stages
            .iter()
            .enumerate()
            .map(|(k, s)| {
                (0..du[k].len())
                    .map(|j| {
                        let tol = bound_tol(s.du_lower[j], s.du_upper[j]);
                        if s.du_lower[j] == s.du_upper[j] || du[k][j] <= s.du_lower[j] + tol {
                            Bound::Lower
                        } else if du[k][j] >= s.du_upper[j] - tol {
                            Bound::Upper
                        } else {
                            Bound::Free
                        }
                    })
                    .collect()
            })
            .collect();
        for k in 0..n {
            for j in 0..du[k].len() {
                let s = &self.stages[k];
                match bounds[k][j] {
                    Bound::Lower => du[k][j] = s.du_lower[j],
                    Bound::Upper => du[k][j] = s.du_upper[j],
                    Bound::Free => {}
                }
            }
        }

        for iter in start + 1..=settings.max_iterations {
            let eqp = self.solve_eqp(&bounds, &du)?;
            // largest feasible step toward the subproblem minimizer
            let mut step = 1.0;
            let mut blocking: Option<(usize, usize, Bound)> = None;
            for k in 0..n {
                let s = &self.stages[k];
                for j in 0..du[k].len() {
                    if bounds[k][j] != Bound::Free {
                        continue;
                    }
                    let d = eqp.du[k][j] - du[k][j];
                    if d > 0.0 && s.du_upper[j].is_finite() {
                        let t = (s.du_upper[j] - du[k][j]) / d;
                        if t < step {
                            step = t.max(0.0);
                            blocking = Some((k, j, Bound::Upper));
                        }
                    } else if d < 0.0 && s.du_lower[j].is_finite() {
                        let t = (s.du_lower[j] - du[k][j]) / d;
                        if t < step {
                            step = t.max(0.0);
                            blocking = Some((k, j, Bound::Lower));
                        }
                    }
                }
            }

            if let Some((bk, bj, side)) = blocking {
                for k in 0..n {
                    for j in 0..du[k].len() {
                        if bounds[k][j] == Bound::Free {
                            du[k][j] += step * (eqp.du[k][j] - du[k][j]);
                        }
                    }
                }
                let s = &self.stages[bk];
                du[bk][bj] = if side == Bound::Upper {
                    s.du_upper[bj]
                } else {
                    s.du_lower[bj]
                };
                bounds[bk][bj] = side;
                continue;
            }

            // full step: check multiplier signs of the working set
            du = eqp.du;
            let dx = eqp.dx;
            let (grads, scales) = self.input_gradients(&dx, &du);
            let mut worst: Option<(usize, usize)> = None;
            let mut worst_val = settings.tolerance * 1e-3;
            for k in 0..n {
                for j in 0..du[k].len() {
                    let g = grads[k][j] / scales[k];
                    let s = &self.stages[k];
                    if s.du_lower[j] == s.du_upper[j] {
                        continue;
                    }
                    let viol = match bounds[k][j] {
                        Bound::Free => 0.0,
                        Bound::Lower => -g,
                        Bound::Upper => g,
                    };
                    if viol > worst_val {
                        worst_val = viol;
                        worst = Some((k, j));
                    }
                }
            }
            match worst {
                Some((k, j)) => bounds[k][j] = Bound::Free,
                None => {
                    let kkt_residual = self.kkt_residual(&dx, &du);
                    if kkt_residual > settings.tolerance || !kkt_residual.is_finite() {
                        return Err(QpError::Inaccurate {
                            residual: kkt_residual,
                            tolerance: settings.tolerance,
                        });
                    }
                    return Ok(self.finish(dx, du, kkt_residual, iter));
                }
            }
        }
        let dx = self.rollout(&du);
        Err(QpError::MaxIterations {
            iterations: settings.max_iterations,
            residual: self.kkt_residual(&dx, &du),
        })
    }
}

fn quad_diag(w: &DVector<f64>, v: &DVector<f64>) -> f64 {
    w.iter().zip(v.iter()).map(|(w, v)| w * v * v).sum()
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn bound_tol(lo: f64, hi: f64) -> f64 {
    let scale = [lo, hi]
        .iter()
        .filter(|v| v.is_finite())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    1e-12 * scale
}
