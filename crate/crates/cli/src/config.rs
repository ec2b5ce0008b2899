//! The experiment file: one TOML document per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use gappy_core::scenarios::ScenarioConfig;
use gappy_core::{TrainConfig, TrainError};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives generation, training and evaluation; replaces `training.seed`.
    #[serde(default)]
    pub seed: u64,
    /// Parent of the timestamped run directories.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Pair cap of the isometry metric on large point sets.
    pub pair_samples: usize,
    /// Score a freshly generated dataset instead of the training bursts.
    pub held_out: bool,
    /// Also train and score independently registered per-modality models.
    pub baseline: bool,
    /// Also score the cross-modality block of the completed distance matrix.
    pub completion: bool,
    /// Pairs kept in each scatter CSV.
    pub scatter_points: usize,
    pub thresholds: Thresholds,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            pair_samples: 200_000,
            held_out: true,
            baseline: false,
            completion: false,
            scatter_points: 20_000,
            thresholds: Thresholds::default(),
        }
    }
}

/// Pass conditions; unset limits are not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub max_relative_rmse: Option<f64>,
    pub baseline_max_relative_rmse: Option<f64>,
    /// Lower bound on baseline relative RMSE over the fused model's.
    pub min_baseline_ratio: Option<f64>,
    pub completion_max_relative_rmse: Option<f64>,
    pub require_rigid: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            max_relative_rmse: None,
            baseline_max_relative_rmse: None,
            min_baseline_ratio: None,
            completion_max_relative_rmse: None,
            require_rigid: true,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            scenario,
            training: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| match e {
            gappy_core::scenarios::ScenarioError::Invalid { field, message } => CliError::Config { path: field, message },
            other => CliError::Scenario(other),
        })?;
        self.training.validate().map_err(|e| match e {
            TrainError::Invalid { field, message } => CliError::Config {
                path: format!("training.{field}"),
                message,
            },
            other => CliError::Train(other),
        })?;
        let ev = &self.evaluation;
        if ev.pair_samples == 0 {
            return Err(invalid("evaluation.pair_samples", "must be at least 1"));
        }
        if ev.scatter_points == 0 {
            return Err(invalid("evaluation.scatter_points", "must be at least 1"));
        }
        let t = &ev.thresholds;
        for (name, v) in [
            ("evaluation.thresholds.max_relative_rmse", t.max_relative_rmse),
            ("evaluation.thresholds.baseline_max_relative_rmse", t.baseline_max_relative_rmse),
            ("evaluation.thresholds.min_baseline_ratio", t.min_baseline_ratio),
            ("evaluation.thresholds.completion_max_relative_rmse", t.completion_max_relative_rmse),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(name, format!("must be positive, got {v}")));
                }
            }
        }
        if (t.baseline_max_relative_rmse.is_some() || t.min_baseline_ratio.is_some()) && !ev.baseline {
            return Err(invalid("evaluation.baseline", "baseline thresholds are set but the baseline is disabled"));
        }
        if t.completion_max_relative_rmse.is_some() && !ev.completion {
            return Err(invalid("evaluation.completion", "a completion threshold is set but completion is disabled"));
        }
        Ok(())
    }

    /// Training settings with the experiment seed applied.
    pub fn training_config(&self) -> TrainConfig {
        let mut t = self.training.clone();
        t.seed = self.seed;
        t
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| invalid("", e.to_string()))
    }
}

/// Parses and validates an experiment document. `origin` names it in
/// syntax errors.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| invalid(origin, e.to_string().trim_end()))?;
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().to_string();
        invalid(&path, message)
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}
