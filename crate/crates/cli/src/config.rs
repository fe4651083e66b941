//! Run configuration: built-in defaults, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use adaptive_nmpc::harness::InitialCondition;
use adaptive_nmpc::{AdaptConfig, AdaptVariant, ControllerConfig};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Adaptive,
}

/// Where the vehicle starts relative to the first reference point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// At rest, displaced from the reference.
    Offset,
    /// Exactly on the reference state.
    Reference,
}

impl Start {
    pub fn initial_condition(&self) -> InitialCondition {
        match self {
            Start::Offset => InitialCondition::default(),
            Start::Reference => InitialCondition::on_reference(),
        }
    }
}

/// Settings shared by every subcommand. All optional so they can be layered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// circle, diamond, agg1, agg2 or file:<path>
    #[arg(long)]
    pub trajectory: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// linear, linear-projected or exp
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<AdaptVariant>,
    /// Regularization strength of the weight update.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Extra damping added to the update denominator.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Prediction horizon N in steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Stages per weight aggregate.
    #[arg(long)]
    pub sub_horizon: Option<usize>,
    /// Step length applied to each QP solution.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight/solve rounds per tick.
    #[arg(long)]
    pub alternations: Option<usize>,
    /// Integration step; file trajectories carry their own.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Std. dev. of the one-tick measurement corruption.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Seeded repetitions averaged into e_r.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Base seed; run k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `reference` when noise is enabled, `offset` otherwise.
    #[arg(long, value_enum)]
    pub start: Option<Start>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<AdaptVariant, String> {
    s.parse()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Fields set in `over` win.
    pub fn merged(self, over: RunConfig) -> RunConfig {
        RunConfig {
            trajectory: over.trajectory.or(self.trajectory),
            mode: over.mode.or(self.mode),
            variant: over.variant.or(self.variant),
            lambda: over.lambda.or(self.lambda),
            gamma: over.gamma.or(self.gamma),
            horizon: over.horizon.or(self.horizon),
            sub_horizon: over.sub_horizon.or(self.sub_horizon),
            alpha: over.alpha.or(self.alpha),
            alternations: over.alternations.or(self.alternations),
            dt: over.dt.or(self.dt),
            noise_sigma: over.noise_sigma.or(self.noise_sigma),
            runs: over.runs.or(self.runs),
            seed: over.seed.or(self.seed),
            start: over.start.or(self.start),
            out: over.out.or(self.out),
        }
    }
}

/// Fully resolved settings; echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub trajectory: String,
    pub mode: Mode,
    pub variant: AdaptVariant,
    pub lambda: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub sub_horizon: usize,
    pub alpha: f64,
    pub alternations: usize,
    /// `None` for file trajectories, which carry their own step.
    pub dt: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub runs: usize,
    pub seed: u64,
    pub start: Start,
    /// Not echoed, so artifacts do not depend on where they are written.
    #[serde(skip)]
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(&self, default_out: &str) -> Result<Resolved, String> {
        let base = ControllerConfig::default();
        let adapt = AdaptConfig::default();
        let r = Resolved {
            trajectory: self.trajectory.clone().unwrap_or_else(|| "circle".into()),
            mode: self.mode.unwrap_or(Mode::Adaptive),
            variant: self.variant.unwrap_or(adapt.variant),
            lambda: self.lambda.unwrap_or(adapt.lambda),
            gamma: self.gamma.unwrap_or(adapt.gamma),
            horizon: self.horizon.unwrap_or(base.horizon),
            sub_horizon: self.sub_horizon.unwrap_or(adapt.sub_horizon),
            alpha: self.alpha.unwrap_or(base.alpha),
            alternations: self.alternations.unwrap_or(base.alternations),
            dt: self.dt,
            noise_sigma: self.noise_sigma,
            runs: self.runs.unwrap_or(1),
            seed: self.seed.unwrap_or(0),
            start: self.start.unwrap_or(if self.noise_sigma.is_some() {
                Start::Reference
            } else {
                Start::Offset
            }),
            out: self
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(default_out)),
        };
        r.validate()?;
        Ok(r)
    }
}

impl Resolved {
    fn validate(&self) -> Result<(), String> {
        let t = self.trajectory.as_str();
        if adaptive_nmpc::Preset::from_name(t).is_none() && !t.starts_with("file:") {
            return Err(format!("unknown trajectory `{t}`"));
        }
        if self.runs == 0 {
            return Err("runs must be >= 1".into());
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(format!("noise-sigma must be >= 0, got {s}"));
            }
        }
        self.controller(self.dt.unwrap_or(ControllerConfig::default().dt))
            .validate()
            .map_err(|e| e.to_string())
    }

    pub fn adapt(&self) -> AdaptConfig {
        AdaptConfig {
            lambda: self.lambda,
            gamma: self.gamma,
            sub_horizon: self.sub_horizon,
            variant: self.variant,
            ..AdaptConfig::default()
        }
    }

    /// Controller for step `dt`; the baseline ignores the adaptation fields.
    pub fn controller(&self, dt: f64) -> ControllerConfig {
        ControllerConfig {
            horizon: self.horizon,
            dt,
            alpha: self.alpha,
            alternations: self.alternations,
            adapt: (self.mode == Mode::Adaptive).then(|| self.adapt()),
            ..ControllerConfig::default()
        }
    }
}
