//! Dense linear algebra, rigid registration, the isometry metric, distance
//! completion and the independently-trained baseline.

pub mod baseline;
pub mod completion;
pub mod linalg;
pub mod metrics;
pub mod procrustes;

use thiserror::Error;

use crate::loca::{LossError, TrainError};

pub use baseline::{baseline_register, BaselineModel};
pub use completion::{complete_distance_matrix, complete_from_points, PartialDistanceMatrix};
pub use linalg::{sym_eig_small, SymEigen};
pub use metrics::{isometry_error, IsometrySummary, MetricRow};
pub use procrustes::{procrustes_fit, RigidTransform};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("point counts differ: {embedded} embedded vs {latent} latent")]
    CountMismatch { embedded: usize, latent: usize },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("distance matrix index {0} is not mapped to any embedded burst")]
    Unmapped(usize),
    #[error("invalid partial distance matrix: {0}")]
    InvalidPartial(String),
    #[error("patch graph is disconnected: components {0:?}")]
    Disconnected(Vec<Vec<usize>>),
    #[error(transparent)]
    Train(Box<TrainError>),
    #[error(transparent)]
    Loss(Box<LossError>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(Box::new(e))
    }
}

impl From<LossError> for EvalError {
    fn from(e: LossError) -> Self {
        EvalError::Loss(Box::new(e))
    }
}
