//! Tracking error and command total variation.

use thiserror::Error;

use crate::dynamics::Control;
use crate::harness::sim::SimLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("total variation needs at least 2 commands, got {0}")]
    TooShort(usize),
    #[error("empty log")]
    EmptyLog,
}

/// `e = sum_i |p_i - p_r,i|`.
pub fn metric_total_error(log: &SimLog) -> Result<f64, MetricError> {
    if log.records.is_empty() {
        return Err(MetricError::EmptyLog);
    }
    Ok(log.records.iter().map(|r| r.position_error()).sum())
}

/// `TV = 1/L sum_{i<L} (|c_i - c_{i+1}| + sum_j |w_j,i - w_j,i+1|)`.
pub fn metric_tv(controls: &[Control]) -> Result<f64, MetricError> {
    let l = controls.len();
    if l < 2 {
        return Err(MetricError::TooShort(l));
    }
    let total: f64 = controls
        .windows(2)
        .map(|w| {
            (w[0].thrust - w[1].thrust).abs() + (w[0].body_rates - w[1].body_rates).abs().sum()
        })
        .sum();
    Ok(total / l as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub e: f64,
    pub tv: f64,
    pub e_r: Option<f64>,
}

impl MetricsReport {
    pub fn from_log(log: &SimLog) -> Result<Self, MetricError> {
        Ok(Self {
            e: metric_total_error(log)?,
            tv: metric_tv(&log.controls())?,
            e_r: None,
        })
    }
}
