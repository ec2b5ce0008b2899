//! Coupled auto-encoders: the three losses, modality scale estimation,
//! training and checkpoints.

pub mod checkpoint;
pub mod losses;
pub mod model;
pub mod train;

use thiserror::Error;

use crate::evaluation::EvalError;
use crate::nets::NetError;

pub use checkpoint::Checkpoint;
pub use losses::{
    burst_covariance, calibration_loss, embed_dataset, reconstruction_loss, whitening_loss, BurstEmbedding,
};
pub use model::{modality_scale, Architecture, GappyLocaModel, ModalityNets, Projection, Standardizer};
pub use train::{
    evaluate_losses, restart_seed, train, LossBreakdown, LossWeights, PreparedData, ProbeRecord, SigmaMode, TrainConfig,
    TrainHistory,
};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("burst needs at least 2 samples to estimate a covariance, got {0}")]
    BurstTooSmall(usize),
    #[error("no data")]
    Empty,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] EvalError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid dataset: {}", .0.join("; "))]
    InvalidDataset(Vec<String>),
    #[error("training configuration: {0}")]
    Config(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("non-finite {term} loss{} at epoch {epoch}", .modality.map(|k| format!(" for modality position {k}")).unwrap_or_default())]
    NonFinite {
        term: &'static str,
        modality: Option<usize>,
        epoch: usize,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Net(#[from] NetError),
}
