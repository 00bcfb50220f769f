//! Run configuration: one JSON document, every field optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use terrain_qd_core::archive::{DEFAULT_LEARNING_RATE, DEFAULT_MIN_F, DEFAULT_QD_OFFSET};
use terrain_qd_core::descriptors::{DEFAULT_ALPHA, DEFAULT_LAMBDA};
use terrain_qd_core::evaluation::{DEFAULT_DT, DEFAULT_EPISODES, DEFAULT_HORIZON_S};
use terrain_qd_core::optimizer::EmitterConfig;
use terrain_qd_core::terrain::{grid_shape, DEFAULT_RESOLUTION_M};
use terrain_qd_core::{DescriptorMode, EvaluationConfig, PenaltyScaling, QdParams};

use crate::error::CliError;

/// Default per-episode response timeout for external evaluators.
pub const DEFAULT_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoCalibrate {
    #[serde(rename = "auto-calibrate")]
    AutoCalibrate,
}

/// Fixed per-channel scales, or `"auto-calibrate"`: `1 / median` of each raw
/// channel over random terrains, computed once at run start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalingSpec {
    Auto(AutoCalibrate),
    Fixed(PenaltyScaling),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorSpec {
    /// The in-process proxy walker.
    Builtin,
    /// A child process speaking the NDJSON episode protocol on stdin/stdout.
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: DescriptorMode,
    /// Iterations.
    pub budget: u64,
    pub emitters: usize,
    pub population: usize,
    pub episodes: u32,
    pub alpha: f64,
    pub lambda: f64,
    pub offset: f64,
    pub min_f: f64,
    pub archive_learning_rate: f64,
    pub resolution_m: f64,
    pub dt: f64,
    pub horizon_s: f64,
    pub sigma0: f64,
    pub restart_patience: u32,
    pub scaling: ScalingSpec,
    /// Random terrains used by auto-calibration.
    pub calibration_terrains: u32,
    pub seed: u64,
    pub evaluator: EvaluatorSpec,
    pub snapshot_interval: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let emitter = EmitterConfig::default();
        Self {
            mode: DescriptorMode::Cassie,
            budget: 1000,
            emitters: 10,
            population: emitter.population,
            episodes: DEFAULT_EPISODES,
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            offset: DEFAULT_QD_OFFSET,
            min_f: DEFAULT_MIN_F,
            archive_learning_rate: DEFAULT_LEARNING_RATE,
            resolution_m: DEFAULT_RESOLUTION_M,
            dt: DEFAULT_DT,
            horizon_s: DEFAULT_HORIZON_S,
            sigma0: emitter.sigma0,
            restart_patience: emitter.restart_patience,
            scaling: ScalingSpec::Auto(AutoCalibrate::AutoCalibrate),
            calibration_terrains: 100,
            seed: 0,
            evaluator: EvaluatorSpec::Builtin,
            snapshot_interval: 50,
            output: PathBuf::from("run"),
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::config(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(CliError::config(field, format!("must be non-negative and finite, got {v}")))
    }
}

fn at_least(field: &'static str, v: u64, min: u64) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::config(field, format!("must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::load(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::load(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        at_least("budget", self.budget, 1)?;
        at_least("emitters", self.emitters as u64, 1)?;
        at_least("population", self.population as u64, 2)?;
        at_least("episodes", u64::from(self.episodes), 1)?;
        non_negative("alpha", self.alpha)?;
        non_negative("lambda", self.lambda)?;
        if !self.offset.is_finite() {
            return Err(CliError::config("offset", "must be finite"));
        }
        if !self.min_f.is_finite() {
            return Err(CliError::config("min_f", "must be finite"));
        }
        let lr = self.archive_learning_rate;
        if !(lr > 0.0 && lr <= 1.0) {
            return Err(CliError::config("archive_learning_rate", format!("must be in (0, 1], got {lr}")));
        }
        grid_shape(self.resolution_m).map_err(|e| CliError::config("resolution_m", e.to_string()))?;
        positive("dt", self.dt)?;
        positive("horizon_s", self.horizon_s)?;
        positive("sigma0", self.sigma0)?;
        at_least("restart_patience", u64::from(self.restart_patience), 1)?;
        if let ScalingSpec::Fixed(s) = &self.scaling {
            s.validate().map_err(|e| CliError::config("scaling", e.to_string()))?;
        }
        at_least("calibration_terrains", u64::from(self.calibration_terrains), 1)?;
        at_least("snapshot_interval", self.snapshot_interval, 1)?;
        if let EvaluatorSpec::External { command, timeout_s } = &self.evaluator {
            if command.is_empty() || command[0].is_empty() {
                return Err(CliError::config("evaluator", "external command is empty"));
            }
            positive("evaluator.timeout_s", *timeout_s)?;
        }
        if self.output.as_os_str().is_empty() {
            return Err(CliError::config("output", "must not be empty"));
        }
        Ok(())
    }

    pub fn qd_params(&self) -> QdParams {
        QdParams {
            mode: self.mode,
            emitters: self.emitters,
            emitter: EmitterConfig {
                population: self.population,
                sigma0: self.sigma0,
                restart_patience: self.restart_patience,
                ..EmitterConfig::default()
            },
            alpha: self.alpha,
            lambda: self.lambda,
            offset: self.offset,
            min_f: self.min_f,
            archive_learning_rate: self.archive_learning_rate,
            seed: self.seed,
        }
    }

    /// Evaluation settings with the given scaling.
    pub fn evaluation(&self, scaling: PenaltyScaling) -> EvaluationConfig {
        EvaluationConfig { episodes: self.episodes, dt: self.dt, horizon_s: self.horizon_s, scaling }
    }

    pub fn fixed_scaling(&self) -> Option<PenaltyScaling> {
        match self.scaling {
            ScalingSpec::Fixed(s) => Some(s),
            ScalingSpec::Auto(_) => None,
        }
    }
}

/// Command-line overrides; `None` keeps the file (or default) value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<DescriptorMode>,
    pub budget: Option<u64>,
    pub emitters: Option<usize>,
    pub population: Option<usize>,
    pub episodes: Option<u32>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub offset: Option<f64>,
    pub min_f: Option<f64>,
    pub archive_learning_rate: Option<f64>,
    pub resolution_m: Option<f64>,
    pub seed: Option<u64>,
    pub snapshot_interval: Option<u64>,
    pub external: Option<Vec<String>>,
    pub timeout_s: Option<f64>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(self, mut c: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            mode,
            budget,
            emitters,
            population,
            episodes,
            alpha,
            lambda,
            offset,
            min_f,
            archive_learning_rate,
            resolution_m,
            seed,
            snapshot_interval,
            output
        );
        if let Some(command) = self.external {
            let timeout_s = match &c.evaluator {
                EvaluatorSpec::External { timeout_s, .. } => *timeout_s,
                EvaluatorSpec::Builtin => DEFAULT_TIMEOUT_S,
            };
            c.evaluator = EvaluatorSpec::External { command, timeout_s };
        }
        if let (Some(t), EvaluatorSpec::External { timeout_s, .. }) = (self.timeout_s, &mut c.evaluator) {
            *timeout_s = t;
        }
        c
    }
}
