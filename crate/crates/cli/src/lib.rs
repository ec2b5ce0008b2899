//! Experiment runner: one TOML file drives data generation, the rigidity
//! check, training, evaluation and the report.

pub mod config;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use gappy_core::evaluation::EvalError;
use gappy_core::scenarios::ScenarioError;
use gappy_core::{LossError, ModelError, TrainError};
use thiserror::Error;

pub use config::{load_config, parse_config, EvaluationConfig, ExperimentConfig, Thresholds};
pub use pipeline::{run_experiment, Check, Outcome, ARTIFACTS};
pub use report::emit_report;

/// Environment variable capping the training worker count.
pub const THREADS_ENV: &str = "GAPPY_FUSE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Applies [`THREADS_ENV`] to the training section.
pub fn apply_thread_env(config: &mut ExperimentConfig, value: Option<&str>) -> Result<(), CliError> {
    if let Some(v) = value {
        let n: usize = v.trim().parse().map_err(|_| CliError::Config {
            path: THREADS_ENV.to_string(),
            message: format!("expected a positive integer, got {v:?}"),
        })?;
        if n == 0 {
            return Err(CliError::Config {
                path: THREADS_ENV.to_string(),
                message: "must be at least 1".into(),
            });
        }
        config.training.threads = Some(n);
    }
    Ok(())
}
