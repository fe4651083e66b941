//! Report CSV and plain-text rendering of grid results.

use std::fmt::Write as _;
use std::io::Write;

use crate::harness::grid::{CellResult, CellStatus, ControllerKind, GridSpec, SweepAxis};
use crate::harness::sim::HarnessError;
use crate::reference::Preset;

pub const REPORT_HEADER: [&str; 10] = [
    "trajectory",
    "variant",
    "lambda",
    "N",
    "Ns",
    "sigma",
    "e",
    "tv",
    "e_r",
    "status",
];

fn opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite())
        .map(|x| x.to_string())
        .unwrap_or_default()
}

/// One row per cell, in cell order. Empty fields mean "not applicable".
pub fn write_report_csv<W: Write>(
    spec: &GridSpec,
    results: &[CellResult],
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in results {
        let c = &r.cell;
        let variant = match c.kind {
            ControllerKind::Baseline => "fixed",
            ControllerKind::Adaptive { .. } => spec.variant.as_str(),
        };
        let rep = r.report.as_ref();
        w.write_record([
            c.trajectory.name().to_string(),
            variant.to_string(),
            c.lambda.to_string(),
            c.horizon.to_string(),
            c.kind
                .sub_horizon()
                .map(|s| s.to_string())
                .unwrap_or_default(),
            opt(c.sigma),
            opt(rep.map(|m| m.e)),
            opt(rep.map(|m| m.tv)),
            opt(rep.and_then(|m| m.e_r)),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cell_text(r: &CellResult) -> String {
    match (&r.status, &r.report) {
        (CellStatus::Ok, Some(m)) => format!("{:.2} | {:.2}", m.e_r.unwrap_or(m.e), m.tv),
        (CellStatus::Skipped, _) => "skipped".to_string(),
        _ => "failed".to_string(),
    }
}

/// Rows are trajectory x controller, columns the swept parameter; cells read `e[m] | TV`.
pub fn render_table(spec: &GridSpec, results: &[CellResult]) -> String {
    let mut columns: Vec<f64> = Vec::new();
    let mut trajectories: Vec<Preset> = Vec::new();
    let mut kinds: Vec<ControllerKind> = Vec::new();
    for r in results {
        let v = spec.axis.value(&r.cell);
        if !columns.contains(&v) {
            columns.push(v);
        }
        if !trajectories.contains(&r.cell.trajectory) {
            trajectories.push(r.cell.trajectory);
        }
        if !kinds.contains(&r.cell.kind) {
            kinds.push(r.cell.kind);
        }
    }

    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut head = vec!["traj".to_string(), "ctrl".to_string()];
    head.extend(
        columns
            .iter()
            .map(|v| format!("{}={}", spec.axis.symbol(), v)),
    );
    grid.push(head);
    for &t in &trajectories {
        for &k in &kinds {
            let mut row = vec![t.label().to_string(), k.label()];
            for &v in &columns {
                let cell = results.iter().find(|r| {
                    r.cell.trajectory == t && r.cell.kind == k && spec.axis.value(&r.cell) == v
                });
                row.push(cell.map(cell_text).unwrap_or_default());
            }
            grid.push(row);
        }
    }

    let ncol = grid[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|j| grid.iter().map(|row| row[j].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let metric = if spec.axis == SweepAxis::Sigma {
        "e_r[m]"
    } else {
        "e[m]"
    };
    let _ = writeln!(s, "{}: {metric} | TV", spec.name);
    for (i, row) in grid.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(s, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (ncol - 1);
            let _ = writeln!(s, "{}", "-".repeat(total));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::grid::{table2_spec, TableDefaults};
    use crate::harness::metrics::MetricsReport;

    fn fake(spec: &GridSpec) -> Vec<CellResult> {
        spec.cells
            .iter()
            .map(|c| CellResult {
                cell: *c,
                status: if c.is_valid() {
                    CellStatus::Ok
                } else {
                    CellStatus::Skipped
                },
                report: c.is_valid().then_some(MetricsReport {
                    e: 1.5,
                    tv: 0.25,
                    e_r: None,
                }),
                run_errors: Vec::new(),
                controller_failures: 0,
            })
            .collect()
    }

    #[test]
    fn csv_marks_skipped_cells() {
        let spec = table2_spec(&TableDefaults::default());
        let res = fake(&spec);
        let mut buf = Vec::new();
        write_report_csv(&spec, &res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "trajectory,variant,lambda,N,Ns,sigma,e,tv,e_r,status"
        );
        assert_eq!(lines.len(), 65);
        assert_eq!(text.matches(",skipped").count(), 12);
        assert!(lines.contains(&"agg1,exp,1,8,14,,,,,skipped"));
        assert!(lines.contains(&"agg1,fixed,1,8,,,1.5,0.25,,ok"));
    }

    #[test]
    fn rendered_layout() {
        let spec = table2_spec(&TableDefaults::default());
        let text = render_table(&spec, &fake(&spec));
        let lines: Vec<&str> = text.lines().collect();
        // title, header, rule, 4 trajectories x 4 rows
        assert_eq!(lines.len(), 3 + 16);
        assert!(lines[1].contains("N=8") && lines[1].contains("N=24"));
        let n14 = lines
            .iter()
            .find(|l| l.starts_with("T1") && l.contains("N14"))
            .unwrap();
        assert!(n14.contains("skipped"));
        assert!(n14.contains("1.50 | 0.25"));
    }
}
