//! Experiment grids: sweeps over trajectory, lambda, horizon, sub-horizon and noise.
//!
//! Cells are independent and run on a rayon pool; results come back in cell order.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptConfig, AdaptVariant};
use crate::controller::ControllerConfig;
use crate::harness::metrics::{metric_total_error, metric_tv, MetricsReport};
use crate::harness::sim::{run_closed_loop, InitialCondition};
use crate::reference::{Preset, ReferenceTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    Baseline,
    Adaptive { sub_horizon: usize },
}

impl ControllerKind {
    /// Row label, e.g. `fixed` or `N8`.
    pub fn label(&self) -> String {
        match self {
            ControllerKind::Baseline => "fixed".to_string(),
            ControllerKind::Adaptive { sub_horizon } => format!("N{sub_horizon}"),
        }
    }

    pub fn sub_horizon(&self) -> Option<usize> {
        match self {
            ControllerKind::Baseline => None,
            ControllerKind::Adaptive { sub_horizon } => Some(*sub_horizon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub trajectory: Preset,
    pub kind: ControllerKind,
    pub lambda: f64,
    pub horizon: usize,
    /// `Some` for noise cells, averaged over the grid's run count.
    pub sigma: Option<f64>,
}

impl GridCell {
    /// Valid iff the sub-horizon fits in the horizon.
    pub fn is_valid(&self) -> bool {
        self.kind.sub_horizon().is_none_or(|s| s <= self.horizon)
    }
}

/// Parameter that varies along the columns of a rendered table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lambda,
    Horizon,
    Sigma,
}

impl SweepAxis {
    pub fn value(&self, cell: &GridCell) -> f64 {
        match self {
            SweepAxis::Lambda => cell.lambda,
            SweepAxis::Horizon => cell.horizon as f64,
            SweepAxis::Sigma => cell.sigma.unwrap_or(0.0),
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Horizon => "N",
            SweepAxis::Sigma => "sigma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub name: String,
    pub axis: SweepAxis,
    pub cells: Vec<GridCell>,
    pub base: ControllerConfig,
    pub variant: AdaptVariant,
    pub gamma: f64,
    pub exp_clamp: f64,
    pub init: InitialCondition,
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellStatus {
    Ok,
    Skipped,
    Failed(String),
}

impl CellStatus {
    pub fn as_str(&self) -> &str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Skipped => "skipped",
            CellStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: GridCell,
    pub status: CellStatus,
    pub report: Option<MetricsReport>,
    /// Per-run `e` of noise cells, in seed order.
    pub run_errors: Vec<f64>,
    /// Ticks on which the controller fell back to holding its previous command.
    pub controller_failures: usize,
}

impl GridSpec {
    /// Controller configuration of one cell.
    pub fn cell_config(&self, cell: &GridCell) -> ControllerConfig {
        let mut cfg = self.base;
        cfg.horizon = cell.horizon;
        cfg.adapt = cell.kind.sub_horizon().map(|sub_horizon| AdaptConfig {
            lambda: cell.lambda,
            gamma: self.gamma,
            sub_horizon,
            variant: self.variant,
            exp_clamp: self.exp_clamp,
        });
        cfg
    }

    fn run_cell(&self, cell: &GridCell, traj: &ReferenceTrajectory) -> CellResult {
        let mut result = CellResult {
            cell: *cell,
            status: CellStatus::Ok,
            report: None,
            run_errors: Vec::new(),
            controller_failures: 0,
        };
        if !cell.is_valid() {
            result.status = CellStatus::Skipped;
            return result;
        }
        let cfg = self.cell_config(cell);
        let outcome = match cell.sigma {
            None => run_closed_loop(traj, &cfg, &self.init, None, self.seed).map(|log| {
                result.controller_failures = log.failures;
                MetricsReport {
                    e: metric_total_error(&log).unwrap_or(f64::NAN),
                    tv: metric_tv(&log.controls()).unwrap_or(f64::NAN),
                    e_r: None,
                }
            }),
            Some(sigma) => {
                let mut tv_sum = 0.0;
                let mut errs = Vec::with_capacity(self.runs);
                let mut res = Ok(());
                for k in 0..self.runs {
                    let seed = self.seed.wrapping_add(k as u64);
                    match run_closed_loop(traj, &cfg, &self.init, Some(sigma), seed) {
                        Ok(log) => {
                            result.controller_failures += log.failures;
                            errs.push(metric_total_error(&log).unwrap_or(f64::NAN));
                            tv_sum += metric_tv(&log.controls()).unwrap_or(f64::NAN);
                        }
                        Err(e) => {
                            res = Err(e);
                            break;
                        }
                    }
                }
                res.map(|_| {
                    let k = errs.len() as f64;
                    let mean = errs.iter().sum::<f64>() / k;
                    result.run_errors = errs;
                    MetricsReport {
                        e: mean,
                        tv: tv_sum / k,
                        e_r: Some(mean),
                    }
                })
            }
        };
        match outcome {
            Ok(r) => result.report = Some(r),
            Err(e) => result.status = CellStatus::Failed(e.to_string()),
        }
        result
    }
}

/// Runs every cell; `threads = None` uses rayon's default pool size.
pub fn run_experiment_grid(spec: &GridSpec, threads: Option<usize>) -> Vec<CellResult> {
    let mut trajectories: HashMap<Preset, Result<ReferenceTrajectory, String>> = HashMap::new();
    for cell in &spec.cells {
        trajectories.entry(cell.trajectory).or_insert_with(|| {
            cell.trajectory
                .build(spec.base.dt)
                .map_err(|e| e.to_string())
        });
    }
    let run = |cell: &GridCell| match &trajectories[&cell.trajectory] {
        Ok(traj) => spec.run_cell(cell, traj),
        Err(msg) => CellResult {
            cell: *cell,
            status: CellStatus::Failed(msg.clone()),
            report: None,
            run_errors: Vec::new(),
            controller_failures: 0,
        },
    };
    let work = || spec.cells.par_iter().map(run).collect::<Vec<_>>();
    match threads {
        Some(t) => match rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
        {
            Ok(pool) => pool.install(work),
            Err(_) => spec.cells.iter().map(run).collect(),
        },
        None => work(),
    }
}

/// Sweep values of the three shipped tables.
pub const TABLE1_LAMBDAS: [f64; 4] = [0.01, 0.67, 1.67, 3.00];
pub const TABLE1_SUB_HORIZONS: [usize; 3] = [2, 8, 12];
pub const TABLE2_HORIZONS: [usize; 4] = [8, 14, 19, 24];
pub const TABLE2_SUB_HORIZONS: [usize; 3] = [8, 14, 18];
pub const TABLE3_SIGMAS: [f64; 4] = [0.5, 2.0, 3.5, 5.0];
pub const TABLE3_SUB_HORIZON: usize = 8;
pub const TABLE3_RUNS: usize = 15;

/// Defaults shared by the shipped tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableDefaults {
    pub base: ControllerConfig,
    pub variant: AdaptVariant,
    pub gamma: f64,
    pub exp_clamp: f64,
    pub init: InitialCondition,
    /// Start of the noise table, where the error should come from the corruption alone.
    pub noise_init: InitialCondition,
    /// Used by the tables that do not sweep it.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TableDefaults {
    fn default() -> Self {
        let adapt = AdaptConfig::default();
        Self {
            base: ControllerConfig::default(),
            variant: adapt.variant,
            gamma: adapt.gamma,
            exp_clamp: adapt.exp_clamp,
            init: InitialCondition::default(),
            noise_init: InitialCondition::on_reference(),
            lambda: adapt.lambda,
            seed: 0,
        }
    }
}

fn spec_from(
    name: &str,
    axis: SweepAxis,
    d: &TableDefaults,
    cells: Vec<GridCell>,
    runs: usize,
) -> GridSpec {
    GridSpec {
        name: name.to_string(),
        axis,
        cells,
        base: d.base,
        variant: d.variant,
        gamma: d.gamma,
        exp_clamp: d.exp_clamp,
        init: d.init,
        runs,
        seed: d.seed,
    }
}

fn rows(subs: &[usize]) -> Vec<ControllerKind> {
    std::iter::once(ControllerKind::Baseline)
        .chain(
            subs.iter()
                .map(|&s| ControllerKind::Adaptive { sub_horizon: s }),
        )
        .collect()
}

/// Trajectory x controller row x lambda, at the base horizon.
pub fn table1_spec(d: &TableDefaults) -> GridSpec {
    let mut cells = Vec::new();
    for traj in Preset::ALL {
        for kind in rows(&TABLE1_SUB_HORIZONS) {
            for lambda in TABLE1_LAMBDAS {
                cells.push(GridCell {
                    trajectory: traj,
                    kind,
                    lambda,
                    horizon: d.base.horizon,
                    sigma: None,
                });
            }
        }
    }
    spec_from("table1", SweepAxis::Lambda, d, cells, 1)
}

/// Trajectory x controller row x horizon.
pub fn table2_spec(d: &TableDefaults) -> GridSpec {
    let mut cells = Vec::new();
    for traj in Preset::ALL {
        for kind in rows(&TABLE2_SUB_HORIZONS) {
            for horizon in TABLE2_HORIZONS {
                cells.push(GridCell {
                    trajectory: traj,
                    kind,
                    lambda: d.lambda,
                    horizon,
                    sigma: None,
                });
            }
        }
    }
    spec_from("table2", SweepAxis::Horizon, d, cells, 1)
}

/// Trajectory x controller row x sigma, averaged over `runs` seeds.
pub fn table3_spec(d: &TableDefaults, runs: usize) -> GridSpec {
    let mut cells = Vec::new();
    for traj in Preset::ALL {
        for kind in rows(&[TABLE3_SUB_HORIZON]) {
            for sigma in TABLE3_SIGMAS {
                cells.push(GridCell {
                    trajectory: traj,
                    kind,
                    lambda: d.lambda,
                    horizon: d.base.horizon,
                    sigma: Some(sigma),
                });
            }
        }
    }
    let mut spec = spec_from("table3", SweepAxis::Sigma, d, cells, runs);
    spec.init = d.noise_init;
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes() {
        let d = TableDefaults::default();
        assert_eq!(table1_spec(&d).cells.len(), 64);
        let t2 = table2_spec(&d);
        assert_eq!(t2.cells.len(), 64);
        let skipped = t2.cells.iter().filter(|c| !c.is_valid()).count();
        // per trajectory: N14 at N=8; N18 at N=8 and N=14
        assert_eq!(skipped, 4 * 3);
        assert_eq!(table3_spec(&d, 15).cells.len(), 32);
    }

    #[test]
    fn skip_rule() {
        let c = GridCell {
            trajectory: Preset::Circle,
            kind: ControllerKind::Adaptive { sub_horizon: 14 },
            lambda: 1.0,
            horizon: 8,
            sigma: None,
        };
        assert!(!c.is_valid());
        assert!(GridCell { horizon: 14, ..c }.is_valid());
        assert!(GridCell {
            kind: ControllerKind::Baseline,
            ..c
        }
        .is_valid());
    }
}
