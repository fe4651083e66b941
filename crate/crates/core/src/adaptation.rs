//! Closed-form state-weight update.
//!
//! With the states and inputs fixed, the weight subproblem is
//! `min_q  lambda q'q - sum_{k<Ns} v_k' q` where `v_k = (dx_k + alpha l_k) ⊙ dx_k`.
//! Its minimizer is `q = sum v_k / (2 lambda + gamma)` (exact for `gamma = 0`).
//! Two variants are provided on top: projection onto `q >= 0`, and the exponential
//! map `q = exp(sum v_k / (2 lambda + gamma))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::StateVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("lambda must be positive, got {0}")]
    Lambda(f64),
    #[error("2 lambda + gamma must be positive, got {0}")]
    Denominator(f64),
    #[error("gamma must be non-negative, got {0}")]
    Gamma(f64),
    #[error("sub-horizon must be at least 1")]
    SubHorizon,
    #[error("sub-horizon {sub} exceeds horizon {horizon}")]
    SubHorizonTooLong { sub: usize, horizon: usize },
    #[error("exp_clamp must be non-negative, got {0}")]
    ExpClamp(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptVariant {
    Linear,
    LinearProjected,
    #[serde(rename = "exp")]
    Exponential,
}

impl AdaptVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdaptVariant::Linear => "linear",
            AdaptVariant::LinearProjected => "linear-projected",
            AdaptVariant::Exponential => "exp",
        }
    }
}

impl std::fmt::Display for AdaptVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AdaptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(AdaptVariant::Linear),
            "linear-projected" | "linear_projected" => Ok(AdaptVariant::LinearProjected),
            "exp" | "exponential" => Ok(AdaptVariant::Exponential),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub sub_horizon: usize,
    pub variant: AdaptVariant,
    /// Upper clamp on the exponent of the exponential variant.
    pub exp_clamp: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 0.0,
            sub_horizon: 8,
            variant: AdaptVariant::Exponential,
            exp_clamp: 30.0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(AdaptError::Lambda(self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(AdaptError::Gamma(self.gamma));
        }
        if self.sub_horizon == 0 {
            return Err(AdaptError::SubHorizon);
        }
        if self.exp_clamp.is_nan() || self.exp_clamp < 0.0 {
            return Err(AdaptError::ExpClamp(self.exp_clamp));
        }
        Ok(())
    }

    pub fn validate_for_horizon(&self, horizon: usize) -> Result<(), AdaptError> {
        self.validate()?;
        if self.sub_horizon > horizon {
            return Err(AdaptError::SubHorizonTooLong {
                sub: self.sub_horizon,
                horizon,
            });
        }
        Ok(())
    }

    fn denominator(&self) -> Result<f64, AdaptError> {
        let d = 2.0 * self.lambda + self.gamma;
        if d.is_nan() || d <= 0.0 {
            return Err(AdaptError::Denominator(d));
        }
        Ok(d)
    }
}

/// Accumulated `sum_k v_k` over the sub-horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorAggregate {
    pub v_sum: StateVector,
}

impl ErrorAggregate {
    pub fn zero() -> Self {
        Self {
            v_sum: StateVector::zeros(),
        }
    }

    pub fn add(&mut self, v: &StateVector) {
        self.v_sum += v;
    }

    /// Sum of `v_k` for the first `sub_horizon` stages.
    pub fn from_steps(
        dx: &[StateVector],
        state_errors: &[StateVector],
        alpha: f64,
        sub_horizon: usize,
    ) -> Self {
        let mut agg = Self::zero();
        for (d, l) in dx.iter().zip(state_errors).take(sub_horizon) {
            agg.add(&compute_v(d, l, alpha));
        }
        agg
    }
}

/// `v_k = (dx_k + alpha l_k) ⊙ dx_k`.
pub fn compute_v(dx: &StateVector, state_error: &StateVector, alpha: f64) -> StateVector {
    (dx + state_error * alpha).component_mul(dx)
}

/// Closed-form minimizer, optionally projected onto the non-negative orthant.
pub fn update_weights_linear(
    agg: &ErrorAggregate,
    cfg: &AdaptConfig,
) -> Result<StateVector, AdaptError> {
    let d = cfg.denominator()?;
    let q = agg.v_sum / d;
    Ok(match cfg.variant {
        AdaptVariant::LinearProjected => q.map(|v| v.max(0.0)),
        _ => q,
    })
}

/// Elementwise `exp(min(v_sum / (2 lambda + gamma), exp_clamp))`. The argument is also
/// held above `-exp_clamp` so the result cannot underflow to zero.
pub fn update_weights_exp(
    agg: &ErrorAggregate,
    cfg: &AdaptConfig,
) -> Result<StateVector, AdaptError> {
    let d = cfg.denominator()?;
    if cfg.exp_clamp.is_nan() || cfg.exp_clamp < 0.0 {
        return Err(AdaptError::ExpClamp(cfg.exp_clamp));
    }
    Ok(agg
        .v_sum
        .map(|v| (v / d).clamp(-cfg.exp_clamp, cfg.exp_clamp).exp()))
}

/// Dispatch on `cfg.variant`.
pub fn update_weights(agg: &ErrorAggregate, cfg: &AdaptConfig) -> Result<StateVector, AdaptError> {
    match cfg.variant {
        AdaptVariant::Exponential => update_weights_exp(agg, cfg),
        AdaptVariant::Linear | AdaptVariant::LinearProjected => update_weights_linear(agg, cfg),
    }
}
