//! Fusing partial, multi-modality burst observations of one latent manifold
//! into a single isometric embedding.
//!
//! Every modality gets its own encoder and decoder; a whitening loss makes
//! each encoder locally isometric, a reconstruction loss keeps it
//! invertible and a calibration loss ties modalities together through bursts
//! that share a latent center.

pub mod evaluation;
pub mod loca;
pub mod model;
pub mod nets;
mod real;
pub mod rigidity;
pub mod scenarios;

pub use real::Real;

pub use evaluation::{EvalError, IsometrySummary, RigidTransform};
pub use loca::{Checkpoint, GappyLocaModel, LossError, TrainConfig, TrainError, TrainHistory};
pub use model::{Burst, CalibrationLink, FusionDataset, GroundTruth, ModalityData, ModelError};
pub use nets::{Activation, AdamConfig, AdamState, Mlp, NetError};
pub use rigidity::{RigidityReport, SensorId, SensorPoint};

pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type Model64 = GappyLocaModel<f64>;
pub type Model32 = GappyLocaModel<f32>;
pub type Transform64 = RigidTransform<f64>;
