//! Dense KKT oracles for the structured QP.

use adaptive_nmpc::qp::{QpSettings, QpStage, StructuredQp, StructuredSolution};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Dense {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
    pub nx: usize,
    pub nu: usize,
    pub n: usize,
}

impl Dense {
    pub fn x_idx(&self, k: usize, i: usize) -> usize {
        k * self.nx + i
    }

    pub fn u_idx(&self, k: usize, j: usize) -> usize {
        (self.n + 1) * self.nx + k * self.nu + j
    }
}

/// Stacks `z = [dx_0..dx_N, du_0..du_{N-1}]` with cost `z'Hz/2 + g'z` and equalities `Cz = b`.
pub fn densify(qp: &StructuredQp) -> Dense {
    let n = qp.stages.len();
    let nx = qp.initial.len();
    let nu = qp.stages[0].b.ncols();
    let nz = (n + 1) * nx + n * nu;
    let mut d = Dense {
        h: DMatrix::zeros(nz, nz),
        g: DVector::zeros(nz),
        c: DMatrix::zeros((n + 1) * nx, nz),
        b: DVector::zeros((n + 1) * nx),
        nx,
        nu,
        n,
    };
    for i in 0..nx {
        let xi = d.x_idx(0, i);
        d.c[(i, xi)] = 1.0;
        d.b[i] = qp.initial[i];
    }
    for (k, s) in qp.stages.iter().enumerate() {
        for i in 0..nx {
            let xi = d.x_idx(k, i);
            d.h[(xi, xi)] = 2.0 * s.q[i];
            d.g[xi] = s.q_lin[i];
        }
        for j in 0..nu {
            let uj = d.u_idx(k, j);
            d.h[(uj, uj)] = 2.0 * s.r[j];
            d.g[uj] = s.r_lin[j];
        }
        for i in 0..nx {
            let row = (k + 1) * nx + i;
            let next = d.x_idx(k + 1, i);
            d.c[(row, next)] = 1.0;
            for m in 0..nx {
                let xm = d.x_idx(k, m);
                d.c[(row, xm)] = -s.a[(i, m)];
            }
            for j in 0..nu {
                let uj = d.u_idx(k, j);
                d.c[(row, uj)] = -s.b[(i, j)];
            }
            d.b[row] = s.defect[i];
        }
    }
    for i in 0..nx {
        let xi = d.x_idx(n, i);
        d.h[(xi, xi)] = 2.0 * qp.terminal_q[i];
        d.g[xi] = qp.terminal_lin[i];
    }
    d
}

/// Solves the KKT system with extra rows fixing `fixed` inputs; returns `z` and the
/// multipliers of the extra rows.
pub fn dense_solve(d: &Dense, fixed: &[(usize, usize, f64)]) -> (DVector<f64>, Vec<f64>) {
    let nz = d.h.nrows();
    let me = d.c.nrows() + fixed.len();
    let mut kkt = DMatrix::zeros(nz + me, nz + me);
    let mut rhs = DVector::zeros(nz + me);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(&d.h);
    kkt.view_mut((nz, 0), (d.c.nrows(), nz)).copy_from(&d.c);
    kkt.view_mut((0, nz), (nz, d.c.nrows()))
        .copy_from(&d.c.transpose());
    rhs.rows_mut(0, nz).copy_from(&(-&d.g));
    rhs.rows_mut(nz, d.c.nrows()).copy_from(&d.b);
    for (r, &(k, j, v)) in fixed.iter().enumerate() {
        let row = nz + d.c.nrows() + r;
        let col = d.u_idx(k, j);
        kkt[(row, col)] = 1.0;
        kkt[(col, row)] = 1.0;
        rhs[row] = v;
    }
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT matrix");
    let mult = (0..fixed.len())
        .map(|r| sol[nz + d.c.nrows() + r])
        .collect();
    (sol.rows(0, nz).into_owned(), mult)
}

pub fn max_diff(sol: &StructuredSolution, d: &Dense, z: &DVector<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for k in 0..=d.n {
        for i in 0..d.nx {
            m = m.max((sol.dx[k][i] - z[d.x_idx(k, i)]).abs());
        }
    }
    for k in 0..d.n {
        for j in 0..d.nu {
            m = m.max((sol.du[k][j] - z[d.u_idx(k, j)]).abs());
        }
    }
    m
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, nx: usize, nu: usize) -> StructuredQp {
    let stages = (0..n)
        .map(|_| {
            let a = DMatrix::identity(nx, nx)
                + DMatrix::from_fn(nx, nx, |_, _| rng.random_range(-0.2..0.2));
            let b = DMatrix::from_fn(nx, nu, |_, _| rng.random_range(-1.0..1.0));
            QpStage {
                q: random_vec(rng, nx, 0.1, 10.0),
                q_lin: random_vec(rng, nx, -1.0, 1.0),
                r: random_vec(rng, nu, 0.1, 10.0),
                r_lin: random_vec(rng, nu, -1.0, 1.0),
                ..QpStage::unconstrained(
                    a,
                    b,
                    random_vec(rng, nx, -0.5, 0.5),
                    DVector::zeros(nx),
                    DVector::zeros(nu),
                )
            }
        })
        .collect();
    StructuredQp {
        initial: random_vec(rng, nx, -1.0, 1.0),
        stages,
        terminal_q: random_vec(rng, nx, 0.1, 10.0),
        terminal_lin: random_vec(rng, nx, -1.0, 1.0),
    }
}

/// Enumerates every lower/free/upper assignment and returns the unique KKT point.
pub fn enumerate_kkt(qp: &StructuredQp) -> DVector<f64> {
    let d = densify(qp);
    let inputs: Vec<(usize, usize)> = (0..d.n)
        .flat_map(|k| (0..d.nu).map(move |j| (k, j)))
        .collect();
    let total = 3usize.pow(inputs.len() as u32);
    let mut found = None;
    for code in 0..total {
        let mut c = code;
        let mut fixed = Vec::new();
        let mut signs = Vec::new();
        let mut free = Vec::new();
        let mut valid = true;
        for &(k, j) in &inputs {
            let s = &qp.stages[k];
            match c % 3 {
                0 => free.push((k, j)),
                1 if s.du_lower[j].is_finite() => {
                    fixed.push((k, j, s.du_lower[j]));
                    signs.push(-1.0);
                }
                2 if s.du_upper[j].is_finite() => {
                    fixed.push((k, j, s.du_upper[j]));
                    signs.push(1.0);
                }
                _ => valid = false,
            }
            c /= 3;
        }
        if !valid {
            continue;
        }
        let (z, mult) = dense_solve(&d, &fixed);
        let primal_ok = free.iter().all(|&(k, j)| {
            let u = z[d.u_idx(k, j)];
            u >= qp.stages[k].du_lower[j] - 1e-12 && u <= qp.stages[k].du_upper[j] + 1e-12
        });
        let dual_ok = mult.iter().zip(&signs).all(|(m, s)| m * s >= -1e-12);
        if primal_ok && dual_ok {
            assert!(
                found.is_none(),
                "KKT point must be unique for a strictly convex QP"
            );
            found = Some(z);
        }
    }
    found.expect("some active set satisfies KKT")
}

/// Worst deviations over a batch of solves.
#[derive(Debug, Clone, Copy, Default)]
pub struct QpCheck {
    pub worst_diff: f64,
    pub worst_kkt: f64,
    pub with_active: usize,
}

impl QpCheck {
    fn add(&mut self, diff: f64, sol: &StructuredSolution) {
        self.worst_diff = self.worst_diff.max(diff);
        self.worst_kkt = self.worst_kkt.max(sol.kkt_residual);
        if sol.active_bounds > 0 {
            self.with_active += 1;
        }
    }
}

/// Random equality-only instances, `N = 1..=5`, state dimension 10.
pub fn equality_check(seed: u64, trials: usize) -> QpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = QpCheck::default();
    for trial in 0..trials {
        let qp = random_qp(&mut rng, 1 + trial % 5, 10, 4);
        let sol = qp
            .solve(&QpSettings::default())
            .expect("equality-only solve");
        let d = densify(&qp);
        let (z, _) = dense_solve(&d, &[]);
        out.add(max_diff(&sol, &d, &z), &sol);
    }
    out
}

/// Small boxed instances checked against enumeration of all active sets.
pub fn boxed_check(seed: u64, trials: usize) -> QpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = QpCheck::default();
    for _ in 0..trials {
        let n = rng.random_range(1..=3);
        let mut qp = random_qp(&mut rng, n, 2, 2);
        qp.initial *= 4.0;
        for s in &mut qp.stages {
            for j in 0..2 {
                s.du_lower[j] = rng.random_range(-0.6..-0.05);
                s.du_upper[j] = rng.random_range(0.05..0.6);
            }
        }
        let sol = qp.solve(&QpSettings::default()).expect("boxed solve");
        let z = enumerate_kkt(&qp);
        out.add(max_diff(&sol, &densify(&qp), &z), &sol);
    }
    out
}

fn scalar_stage(q: f64, lo: f64, hi: f64) -> QpStage {
    QpStage {
        du_lower: DVector::from_element(1, lo),
        du_upper: DVector::from_element(1, hi),
        ..QpStage::unconstrained(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DVector::from_element(1, q),
            DVector::from_element(1, 1.0),
        )
    }
}

/// Scalar problems solved by hand; returns the worst deviation from the hand solution
/// and the number of active bounds found in each.
///
/// One stage, `x1 = x0 + u0`, cost `u0^2 + x1^2`, `x0 = 3`, `u0 in [-1, 1]`: the free
/// optimum `-1.5` is clamped to `-1`, so `x1 = 2` and the cost is 5. The bound multiplier
/// `d/du (u^2 + (3 + u)^2) = 2` at `u = -1` has the right sign.
///
/// Two stages, unit weights, `x0 = 4`, `u in [-0.5, 1]`: both inputs clamp at `-0.5`,
/// giving `x = [4, 3.5, 3]`.
pub fn hand_cases() -> (f64, [usize; 2]) {
    let one = StructuredQp {
        initial: DVector::from_element(1, 3.0),
        stages: vec![scalar_stage(0.0, -1.0, 1.0)],
        terminal_q: DVector::from_element(1, 1.0),
        terminal_lin: DVector::zeros(1),
    };
    let s1 = one.solve(&QpSettings::default()).expect("hand case 1");
    let mut worst = (s1.du[0][0] + 1.0)
        .abs()
        .max((s1.dx[1][0] - 2.0).abs())
        .max((s1.objective - 5.0).abs());

    let two = StructuredQp {
        initial: DVector::from_element(1, 4.0),
        stages: vec![scalar_stage(1.0, -0.5, 1.0); 2],
        terminal_q: DVector::from_element(1, 1.0),
        terminal_lin: DVector::zeros(1),
    };
    let s2 = two.solve(&QpSettings::default()).expect("hand case 2");
    for (k, want) in [4.0, 3.5, 3.0].iter().enumerate() {
        worst = worst.max((s2.dx[k][0] - want).abs());
    }
    for k in 0..2 {
        worst = worst.max((s2.du[k][0] + 0.5).abs());
    }
    (worst, [s1.active_bounds, s2.active_bounds])
}
