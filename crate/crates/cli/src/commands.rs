//! The three subcommands and their artifacts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adaptive_nmpc::harness::{
    read_log_csv, render_table, run_closed_loop, run_experiment_grid, table1_spec, table2_spec,
    table3_spec, write_report_csv, CellStatus, GridSpec, LogRow, MetricsReport, TableDefaults,
    TABLE3_RUNS,
};
use adaptive_nmpc::reference::ReferenceTrajectory;
use adaptive_nmpc::{ControllerConfig, Preset};
use serde::Serialize;
use serde_json::json;

use crate::config::{Mode, Resolved, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit 2.
    Usage(String),
    /// Failure while running or writing; exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub const THREADS_ENV: &str = "ADAPTIVE_NMPC_THREADS";

fn threads() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "{THREADS_ENV} must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(None),
    }
}

pub fn layered(config: Option<&Path>, flags: RunConfig) -> Result<RunConfig, CliError> {
    let file = match config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    Ok(file.merged(flags))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Single-line JSON written as a `#` comment at the top of CSV artifacts.
fn meta_line<T: Serialize>(meta: &T) -> Result<String, CliError> {
    Ok(format!(
        "# {}\n",
        serde_json::to_string(meta).map_err(runtime)?
    ))
}

fn load_trajectory(r: &Resolved) -> Result<(ReferenceTrajectory, f64), CliError> {
    let default_dt = ControllerConfig::default().dt;
    if let Some(path) = r.trajectory.strip_prefix("file:") {
        let traj = ReferenceTrajectory::load(Path::new(path))
            .map_err(|e| CliError::Runtime(format!("trajectory {path}: {e}")))?;
        let dt = r.dt.unwrap_or(traj.dt);
        Ok((traj, dt))
    } else {
        let preset = Preset::from_name(&r.trajectory)
            .ok_or_else(|| CliError::Usage(format!("unknown trajectory `{}`", r.trajectory)))?;
        let dt = r.dt.unwrap_or(default_dt);
        let traj = preset.build(dt).map_err(runtime)?;
        Ok((traj, dt))
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    e: f64,
    tv: f64,
    e_r: Option<f64>,
    run_errors: Vec<f64>,
    controller_failures: usize,
    noise_index: Option<usize>,
    seed: u64,
    variant: Option<&'a str>,
    config: &'a Resolved,
    controller: &'a ControllerConfig,
}

pub fn simulate(cfg: RunConfig) -> Result<(), CliError> {
    let r = cfg.resolve("out").map_err(CliError::Usage)?;
    let (traj, dt) = load_trajectory(&r)?;
    let ctrl = r.controller(dt);
    let init = r.start.initial_condition();
    let runs = if r.noise_sigma.is_some() { r.runs } else { 1 };

    let mut first = None;
    let mut run_errors = Vec::with_capacity(runs);
    let mut failures = 0;
    for k in 0..runs {
        let seed = r.seed.wrapping_add(k as u64);
        let log = run_closed_loop(&traj, &ctrl, &init, r.noise_sigma, seed).map_err(runtime)?;
        let m = MetricsReport::from_log(&log).map_err(runtime)?;
        run_errors.push(m.e);
        failures += log.failures;
        if first.is_none() {
            first = Some((log, m));
        }
    }
    let (log, m) = first.expect("at least one run");
    let e_r = r
        .noise_sigma
        .map(|_| run_errors.iter().sum::<f64>() / run_errors.len() as f64);

    let summary = Summary {
        e: m.e,
        tv: m.tv,
        e_r,
        run_errors: if r.noise_sigma.is_some() {
            run_errors
        } else {
            Vec::new()
        },
        controller_failures: failures,
        noise_index: log.noise_index,
        seed: r.seed,
        variant: (r.mode == Mode::Adaptive).then(|| r.variant.as_str()),
        config: &r,
        controller: &ctrl,
    };

    out_dir(&r.out)?;
    let mut w = create(&r.out.join("log.csv"))?;
    w.write_all(
        meta_line(&json!({ "seed": r.seed, "config": &r, "controller": &ctrl }))?.as_bytes(),
    )
    .map_err(runtime)?;
    log.write_csv(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    let mut s = create(&r.out.join("summary.json"))?;
    serde_json::to_writer(&mut s, &summary).map_err(runtime)?;
    s.write_all(b"\n").map_err(runtime)?;
    s.flush().map_err(runtime)?;
    if failures > 0 {
        eprintln!("warning: controller fell back to the previous command on {failures} ticks");
    }
    Ok(())
}

pub fn table(id: u8, cfg: RunConfig) -> Result<(), CliError> {
    for (name, set) in [
        ("trajectory", cfg.trajectory.is_some()),
        ("mode", cfg.mode.is_some()),
        ("sub-horizon", cfg.sub_horizon.is_some()),
        ("noise-sigma", cfg.noise_sigma.is_some()),
        ("start", cfg.start.is_some()),
    ] {
        if set {
            return Err(CliError::Usage(format!(
                "--{name} is swept or fixed by `table`"
            )));
        }
    }
    let runs = cfg.runs.unwrap_or(TABLE3_RUNS);
    let r = RunConfig {
        runs: Some(runs),
        ..cfg
    }
    .resolve("out")
    .map_err(CliError::Usage)?;
    let dt = r.dt.unwrap_or(ControllerConfig::default().dt);
    let defaults = TableDefaults {
        base: ControllerConfig {
            adapt: None,
            ..r.controller(dt)
        },
        variant: r.variant,
        gamma: r.gamma,
        lambda: r.lambda,
        seed: r.seed,
        ..TableDefaults::default()
    };
    let spec: GridSpec = match id {
        1 => table1_spec(&defaults),
        2 => table2_spec(&defaults),
        3 => table3_spec(&defaults, runs),
        other => {
            return Err(CliError::Usage(format!(
                "table must be 1, 2 or 3, got {other}"
            )))
        }
    };
    // the adaptation fields of each cell are validated when the controller is built
    let results = run_experiment_grid(&spec, threads()?);

    let meta = json!({
        "table": id,
        "seed": spec.seed,
        "runs": spec.runs,
        "variant": spec.variant.as_str(),
        "gamma": spec.gamma,
        "lambda": r.lambda,
        "exp_clamp": spec.exp_clamp,
        "init": spec.init,
        "controller": spec.base,
    });
    out_dir(&r.out)?;
    let stem = format!("table{id}");

    let mut w = create(&r.out.join(format!("{stem}.csv")))?;
    w.write_all(meta_line(&meta)?.as_bytes()).map_err(runtime)?;
    write_report_csv(&spec, &results, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    let mut t = create(&r.out.join(format!("{stem}.txt")))?;
    write!(t, "{}", meta_line(&meta)?).map_err(runtime)?;
    write!(t, "{}", render_table(&spec, &results)).map_err(runtime)?;
    t.flush().map_err(runtime)?;

    let mut j = create(&r.out.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(&mut j, &meta).map_err(runtime)?;
    j.write_all(b"\n").map_err(runtime)?;
    j.flush().map_err(runtime)?;

    for res in &results {
        if let CellStatus::Failed(msg) = &res.status {
            eprintln!(
                "warning: cell {} {} failed: {msg}",
                res.cell.trajectory,
                res.cell.kind.label()
            );
        }
    }
    Ok(())
}

struct LoadedLog {
    label: String,
    meta: Vec<String>,
    rows: Vec<LogRow>,
}

fn load_log(path: &Path, label: String) -> Result<LoadedLog, CliError> {
    let open = || {
        File::open(path)
            .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))
    };
    let meta = BufReader::new(open()?)
        .lines()
        .map_while(Result::ok)
        .take_while(|l| l.starts_with('#'))
        .collect();
    let rows =
        read_log_csv(open()?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(LoadedLog { label, meta, rows })
}

fn default_label(path: &Path, index: usize) -> String {
    let from_dir = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty());
    let from_stem = path.file_stem().and_then(|s| s.to_str());
    from_dir
        .or(from_stem)
        .map(str::to_string)
        .unwrap_or_else(|| format!("log{index}"))
}

fn write_columns(
    path: &Path,
    meta: &[String],
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    for m in meta {
        writeln!(w, "{m}").map_err(runtime)?;
    }
    writeln!(w, "{}", header.join(",")).map_err(runtime)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn plotdata(logs: &[PathBuf], labels: &[String], out: &Path) -> Result<(), CliError> {
    if logs.is_empty() {
        return Err(CliError::Usage("at least one --log is required".into()));
    }
    if labels.len() > logs.len() {
        return Err(CliError::Usage(
            "more --label values than --log values".into(),
        ));
    }
    let mut loaded = Vec::with_capacity(logs.len());
    for (i, path) in logs.iter().enumerate() {
        let label = labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| default_label(path, i));
        loaded.push(load_log(path, label)?);
    }
    for i in 0..loaded.len() {
        if loaded[..i].iter().any(|l| l.label == loaded[i].label) {
            loaded[i].label = format!("{}_{i}", loaded[i].label);
        }
    }
    out_dir(out)?;

    for l in &loaded {
        let base = |kind: &str| out.join(format!("{}_{kind}.csv", l.label));
        write_columns(
            &base("path"),
            &l.meta,
            &cols(&["x", "y", "z", "x_ref", "y_ref", "z_ref"]),
            l.rows.iter().map(|r| {
                vec![
                    r.position.x,
                    r.position.y,
                    r.position.z,
                    r.reference.x,
                    r.reference.y,
                    r.reference.z,
                ]
            }),
        )?;
        write_columns(
            &base("position"),
            &l.meta,
            &cols(&["t", "px", "py", "pz", "prx", "pry", "prz"]),
            l.rows.iter().map(|r| {
                vec![
                    r.t,
                    r.position.x,
                    r.position.y,
                    r.position.z,
                    r.reference.x,
                    r.reference.y,
                    r.reference.z,
                ]
            }),
        )?;
        write_columns(
            &base("controls"),
            &l.meta,
            &cols(&["t", "c", "wx", "wy", "wz"]),
            l.rows.iter().map(|r| {
                let mut v = vec![r.t];
                v.extend(r.control);
                v
            }),
        )?;
    }

    if loaded.len() > 1 {
        // keep only instants present in every log
        let times: Vec<f64> = loaded[0]
            .rows
            .iter()
            .map(|r| r.t)
            .filter(|t| loaded[1..].iter().all(|l| l.rows.iter().any(|r| r.t == *t)))
            .collect();
        let mut header = cols(&["t", "prx", "pry", "prz"]);
        for l in &loaded {
            for c in ["px", "py", "pz", "d_i"] {
                header.push(format!("{}_{c}", l.label));
            }
        }
        let meta: Vec<String> = loaded.iter().flat_map(|l| l.meta.iter().cloned()).collect();
        let rows = times.iter().map(|&t| {
            let first = loaded[0]
                .rows
                .iter()
                .find(|r| r.t == t)
                .expect("time from first log");
            let mut v = vec![t, first.reference.x, first.reference.y, first.reference.z];
            for l in &loaded {
                let r = l.rows.iter().find(|r| r.t == t).expect("common time");
                v.extend([r.position.x, r.position.y, r.position.z, r.d_i]);
            }
            v
        });
        write_columns(&out.join("comparison.csv"), &meta, &header, rows)?;
    }
    Ok(())
}
