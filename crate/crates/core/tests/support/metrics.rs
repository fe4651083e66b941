//! Scalar reference loops for the tracking metrics.

use adaptive_nmpc::harness::{metric_total_error, metric_tv, SimLog, SimRecord};
use adaptive_nmpc::{Control, ReferencePoint, State};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn record(p: Vector3<f64>, pr: Vector3<f64>, u: Control) -> SimRecord {
    SimRecord {
        t: 0.0,
        x_true: State::at_rest(p),
        x_meas: State::at_rest(p),
        u_applied: u,
        reference: ReferencePoint {
            t: 0.0,
            state: State::at_rest(pr),
            control: Control::hover(),
        },
        q: Default::default(),
        kkt: 0.0,
        failed: false,
    }
}

pub fn log_of(records: Vec<SimRecord>) -> SimLog {
    SimLog {
        trajectory: "test".into(),
        records,
        noise_index: None,
        failures: 0,
    }
}

pub fn vec3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

pub fn error_loop(p: &[[f64; 3]], pr: &[[f64; 3]]) -> f64 {
    let mut e = 0.0;
    for i in 0..p.len() {
        let dx = p[i][0] - pr[i][0];
        let dy = p[i][1] - pr[i][1];
        let dz = p[i][2] - pr[i][2];
        e += (dx * dx + dy * dy + dz * dz).sqrt();
    }
    e
}

pub fn tv_loop(u: &[[f64; 4]]) -> f64 {
    let l = u.len();
    let mut s = 0.0;
    for i in 0..l - 1 {
        let dc = (u[i][0] - u[i + 1][0]).abs();
        let mut dw = 0.0;
        #[allow(clippy::needless_range_loop)]
        for j in 1..4 {
            dw += (u[i][j] - u[i + 1][j]).abs();
        }
        s += dc + dw;
    }
    s / l as f64
}

/// Random logs whose `e` or `TV` differ from the scalar loops, out of `logs`.
pub fn random_logs_check(seed: u64, logs: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..logs {
        let l = rng.random_range(2..300);
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let mut records = Vec::with_capacity(l);
        let (mut p, mut pr, mut u) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..l {
            let a = vec3(&mut rng, scale);
            let b = vec3(&mut rng, scale);
            let c = Control::new(rng.random_range(2.0..20.0), vec3(&mut rng, 6.0));
            p.push([a.x, a.y, a.z]);
            pr.push([b.x, b.y, b.z]);
            u.push([c.thrust, c.body_rates.x, c.body_rates.y, c.body_rates.z]);
            records.push(record(a, b, c));
        }
        let log = log_of(records);
        let e = metric_total_error(&log).expect("non-empty");
        let tv = metric_tv(&log.controls()).expect("long enough");
        if e != error_loop(&p, &pr) || tv != tv_loop(&u) || e < 0.0 || tv < 0.0 {
            mismatches += 1;
        }
    }
    mismatches
}

/// Constant dyadic offsets give `e = L * offset` and constant commands give `TV = 0`,
/// both exactly.
pub fn hand_cases_exact() -> bool {
    let offset = Vector3::new(0.0, -0.25, 0.0);
    let u = Control::new(7.5, Vector3::new(0.3, -1.0, 2.0));
    [1usize, 7, 100, 256].iter().all(|&l| {
        let records = (0..l)
            .map(|i| {
                let pr = Vector3::new(i as f64 - 8.0, 1.5, 0.5);
                record(pr + offset, pr, u)
            })
            .collect();
        let log = log_of(records);
        let e_ok = metric_total_error(&log) == Ok(0.25 * l as f64);
        let tv_ok = l < 2 || metric_tv(&log.controls()) == Ok(0.0);
        e_ok && tv_ok
    })
}
