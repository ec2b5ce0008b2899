//! Self-describing model checkpoint (JSON).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{GappyLocaModel, ModalityNets, Projection, Standardizer};
use super::train::LossWeights;
use super::LossError;
use crate::nets::{Activation, Mlp};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Row-major `fan_out x fan_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerRecord {
    pub mean: Vec<f64>,
    pub whiten: Vec<Vec<f64>>,
    pub unwhiten: Vec<Vec<f64>>,
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityRecord {
    pub modality_id: usize,
    pub ambient_dim: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub standardizer: StandardizerRecord,
    pub encoder: NetworkRecord,
    pub decoder: NetworkRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub scalar: String,
    pub intrinsic_dim: usize,
    pub embedding_dim: usize,
    pub modalities: Vec<ModalityRecord>,
    pub projection: Option<ProjectionRecord>,
    pub training: TrainingMeta,
}

fn matrix_rows<T: Real>(m: &Array2<T>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()
}

fn rows_matrix<T: Real>(rows: &[Vec<f64>]) -> Result<Array2<T>, LossError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(LossError::Config("ragged matrix in checkpoint".into()));
    }
    Ok(Array2::from_shape_fn((n, m), |(i, j)| T::lit(rows[i][j])))
}

fn vec_of<T: Real>(v: &[f64]) -> Array1<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn network_record<T: Real>(net: &Mlp<T>) -> NetworkRecord {
    NetworkRecord {
        sizes: net.sizes().to_vec(),
        activation: net.activation(),
        layers: (0..net.num_layers())
            .map(|l| {
                let (w, b) = net.layer(l);
                LayerRecord {
                    weights: w.iter().map(|v| v.to_f64_lossy()).collect(),
                    bias: b.iter().map(|v| v.to_f64_lossy()).collect(),
                }
            })
            .collect(),
    }
}

fn network_from<T: Real>(rec: &NetworkRecord) -> Result<Mlp<T>, LossError> {
    let mut params = Vec::new();
    for l in &rec.layers {
        params.extend(l.weights.iter().chain(&l.bias).map(|&x| T::lit(x)));
    }
    Ok(Mlp::from_params(&rec.sizes, rec.activation, params)?)
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &GappyLocaModel<T>, training: TrainingMeta) -> Self {
        Self {
            scalar: T::type_name().to_string(),
            intrinsic_dim: model.intrinsic_dim,
            embedding_dim: model.embedding_dim,
            modalities: model
                .modalities
                .iter()
                .map(|m| ModalityRecord {
                    modality_id: m.modality_id,
                    ambient_dim: m.ambient_dim,
                    sigma: m.sigma,
                    lambda: m.lambda,
                    standardizer: StandardizerRecord {
                        mean: m.standardizer.mean.iter().map(|v| v.to_f64_lossy()).collect(),
                        whiten: matrix_rows(&m.standardizer.whiten),
                        unwhiten: matrix_rows(&m.standardizer.unwhiten),
                        output_scale: m.standardizer.output_scale.to_f64_lossy(),
                    },
                    encoder: network_record(&m.encoder),
                    decoder: network_record(&m.decoder),
                })
                .collect(),
            projection: model.projection.as_ref().map(|p| ProjectionRecord {
                mean: p.mean.iter().map(|v| v.to_f64_lossy()).collect(),
                basis: matrix_rows(&p.basis),
            }),
            training,
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<GappyLocaModel<T>, LossError> {
        let modalities = self
            .modalities
            .iter()
            .map(|r| {
                Ok(ModalityNets {
                    modality_id: r.modality_id,
                    ambient_dim: r.ambient_dim,
                    sigma: r.sigma,
                    lambda: r.lambda,
                    standardizer: Standardizer {
                        mean: vec_of(&r.standardizer.mean),
                        whiten: rows_matrix(&r.standardizer.whiten)?,
                        unwhiten: rows_matrix(&r.standardizer.unwhiten)?,
                        output_scale: T::lit(r.standardizer.output_scale),
                    },
                    encoder: network_from(&r.encoder)?,
                    decoder: network_from(&r.decoder)?,
                })
            })
            .collect::<Result<Vec<_>, LossError>>()?;
        let projection = match &self.projection {
            Some(p) => Some(Projection {
                mean: vec_of(&p.mean),
                basis: rows_matrix(&p.basis)?,
            }),
            None => None,
        };
        Ok(GappyLocaModel {
            intrinsic_dim: self.intrinsic_dim,
            embedding_dim: self.embedding_dim,
            modalities,
            projection,
        })
    }
}
