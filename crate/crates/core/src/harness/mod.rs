//! Closed-loop simulation, metrics and experiment grids.

pub mod grid;
pub mod metrics;
pub mod report;
pub mod sim;

pub use grid::{
    run_experiment_grid, table1_spec, table2_spec, table3_spec, CellResult, CellStatus,
    ControllerKind, GridCell, GridSpec, SweepAxis, TableDefaults, TABLE1_LAMBDAS,
    TABLE1_SUB_HORIZONS, TABLE2_HORIZONS, TABLE2_SUB_HORIZONS, TABLE3_RUNS, TABLE3_SIGMAS,
    TABLE3_SUB_HORIZON,
};
pub use metrics::{metric_total_error, metric_tv, MetricError, MetricsReport};
pub use report::{render_table, write_report_csv, REPORT_HEADER};
pub use sim::{
    inject_noise, read_log_csv, run_closed_loop, run_closed_loop_with, HarnessError,
    InitialCondition, LogRow, NoiseConfig, SimLog, SimRecord, LOG_HEADER,
};
