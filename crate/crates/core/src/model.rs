//! Dataset types shared by every stage, their validation, and the JSON file
//! schema.
//!
//! A [`FusionDataset`] is everything the trainer may look at: the burst
//! observations of every modality plus the calibration links. Latent burst
//! centers live in a separate [`GroundTruth`] document so the training code
//! never has access to them.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// A latent-space point (burst center).
pub type LatentPoint = Vec<f64>;

/// `M` observations of one burst in a modality's observation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub burst_id: usize,
    pub samples: Vec<Vec<f64>>,
}

impl Burst {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples as an `M x D` matrix in the requested precision.
    pub fn to_matrix<T: Real>(&self) -> Array2<T> {
        let rows = self.samples.len();
        let cols = self.samples.first().map_or(0, Vec::len);
        Array2::from_shape_fn((rows, cols), |(i, j)| T::lit(self.samples[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityData {
    pub modality_id: usize,
    pub ambient_dim: usize,
    /// Latent burst noise scale of this instrument.
    pub sigma: f64,
    pub bursts: Vec<Burst>,
}

/// Two bursts, in two different modalities, that share a latent center.
///
/// Serialized as `[i, j, k, s]`: burst `i` of modality `k` and burst `j` of
/// modality `s`. Modalities are referenced by `modality_id`, bursts by
/// position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct CalibrationLink {
    pub burst_a: usize,
    pub burst_b: usize,
    pub modality_a: usize,
    pub modality_b: usize,
}

impl CalibrationLink {
    pub fn new(burst_a: usize, burst_b: usize, modality_a: usize, modality_b: usize) -> Self {
        Self {
            burst_a,
            burst_b,
            modality_a,
            modality_b,
        }
    }
}

impl From<[usize; 4]> for CalibrationLink {
    fn from(q: [usize; 4]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }
}

impl From<CalibrationLink> for [usize; 4] {
    fn from(l: CalibrationLink) -> Self {
        [l.burst_a, l.burst_b, l.modality_a, l.modality_b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionDataset {
    pub intrinsic_dim: usize,
    pub modalities: Vec<ModalityData>,
    pub calibration: Vec<CalibrationLink>,
}

impl FusionDataset {
    /// Position of the modality with this id.
    pub fn modality_index(&self, modality_id: usize) -> Option<usize> {
        self.modalities.iter().position(|m| m.modality_id == modality_id)
    }

    pub fn modality(&self, modality_id: usize) -> Option<&ModalityData> {
        self.modalities.iter().find(|m| m.modality_id == modality_id)
    }

    pub fn total_bursts(&self) -> usize {
        self.modalities.iter().map(|m| m.bursts.len()).sum()
    }

    /// Calibration links as `(modality index, burst, modality index, burst)`.
    ///
    /// Links that do not resolve are skipped; run [`validate_dataset`] first.
    pub fn resolved_links(&self) -> Vec<(usize, usize, usize, usize)> {
        self.calibration
            .iter()
            .filter_map(|l| {
                let a = self.modality_index(l.modality_a)?;
                let b = self.modality_index(l.modality_b)?;
                Some((a, l.burst_a, b, l.burst_b))
            })
            .collect()
    }

    /// The single-modality dataset used by the independent baseline.
    pub fn restricted_to(&self, modality_id: usize) -> Option<FusionDataset> {
        let m = self.modality(modality_id)?.clone();
        Some(FusionDataset {
            intrinsic_dim: self.intrinsic_dim,
            modalities: vec![m],
            calibration: Vec::new(),
        })
    }
}

/// Latent truth for every burst of a dataset, kept out of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intrinsic_dim: usize,
    pub scenario: String,
    pub modalities: Vec<ModalityTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityTruth {
    pub modality_id: usize,
    /// Human readable description of the modality's latent domain.
    pub domain: String,
    /// Latent center of each burst, indexed like the dataset's bursts.
    pub centers: Vec<LatentPoint>,
    /// Path-connected patch of the domain each burst belongs to.
    pub patches: Vec<usize>,
}

impl GroundTruth {
    pub fn modality(&self, modality_id: usize) -> Option<&ModalityTruth> {
        self.modalities.iter().find(|m| m.modality_id == modality_id)
    }

    pub fn center(&self, modality_id: usize, burst: usize) -> Option<&LatentPoint> {
        self.modality(modality_id)?.centers.get(burst)
    }
}

/// One broken invariant found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    IntrinsicDimZero,
    DuplicateModality { modality_id: usize },
    AmbientDimZero { modality_id: usize },
    AmbientBelowIntrinsic { modality_id: usize, ambient_dim: usize, intrinsic_dim: usize },
    BadSigma { modality_id: usize, sigma: f64 },
    BurstTooSmall { modality_id: usize, burst: usize, samples: usize },
    SampleWidth { modality_id: usize, burst: usize, sample: usize, width: usize, expected: usize },
    NonFinite { modality_id: usize, burst: usize, sample: usize },
    SameModalityLink { link: usize },
    DanglingLink { link: usize, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IntrinsicDimZero => write!(f, "intrinsic_dim must be at least 1"),
            Violation::DuplicateModality { modality_id } => {
                write!(f, "duplicate modality_id {modality_id}")
            }
            Violation::AmbientDimZero { modality_id } => {
                write!(f, "modality {modality_id}: ambient_dim must be at least 1")
            }
            Violation::AmbientBelowIntrinsic {
                modality_id,
                ambient_dim,
                intrinsic_dim,
            } => write!(
                f,
                "modality {modality_id}: ambient_dim {ambient_dim} < intrinsic_dim {intrinsic_dim}"
            ),
            Violation::BadSigma { modality_id, sigma } => {
                write!(f, "modality {modality_id}: sigma must be positive and finite, got {sigma}")
            }
            Violation::BurstTooSmall {
                modality_id,
                burst,
                samples,
            } => write!(
                f,
                "burst M<2: modality {modality_id} burst {burst} has {samples} sample(s)"
            ),
            Violation::SampleWidth {
                modality_id,
                burst,
                sample,
                width,
                expected,
            } => write!(
                f,
                "modality {modality_id} burst {burst} sample {sample}: width {width}, expected {expected}"
            ),
            Violation::NonFinite {
                modality_id,
                burst,
                sample,
            } => write!(
                f,
                "modality {modality_id} burst {burst} sample {sample}: non-finite value"
            ),
            Violation::SameModalityLink { link } => {
                write!(f, "calibration link {link} connects a modality to itself")
            }
            Violation::DanglingLink { link, detail } => {
                write!(f, "dangling calibration index in link {link}: {detail}")
            }
        }
    }
}

/// Every invariant violation of `dataset`; empty when the dataset is valid.
pub fn validate_dataset(dataset: &FusionDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = dataset.intrinsic_dim;
    if d == 0 {
        out.push(Violation::IntrinsicDimZero);
    }
    for (pos, m) in dataset.modalities.iter().enumerate() {
        let id = m.modality_id;
        if dataset.modalities[..pos].iter().any(|o| o.modality_id == id) {
            out.push(Violation::DuplicateModality { modality_id: id });
        }
        if m.ambient_dim == 0 {
            out.push(Violation::AmbientDimZero { modality_id: id });
        } else if m.ambient_dim < d {
            out.push(Violation::AmbientBelowIntrinsic {
                modality_id: id,
                ambient_dim: m.ambient_dim,
                intrinsic_dim: d,
            });
        }
        if !(m.sigma > 0.0 && m.sigma.is_finite()) {
            out.push(Violation::BadSigma {
                modality_id: id,
                sigma: m.sigma,
            });
        }
        for (b, burst) in m.bursts.iter().enumerate() {
            if burst.samples.len() < 2 {
                out.push(Violation::BurstTooSmall {
                    modality_id: id,
                    burst: b,
                    samples: burst.samples.len(),
                });
            }
            for (s, sample) in burst.samples.iter().enumerate() {
                if sample.len() != m.ambient_dim {
                    out.push(Violation::SampleWidth {
                        modality_id: id,
                        burst: b,
                        sample: s,
                        width: sample.len(),
                        expected: m.ambient_dim,
                    });
                } else if sample.iter().any(|v| !v.is_finite()) {
                    out.push(Violation::NonFinite {
                        modality_id: id,
                        burst: b,
                        sample: s,
                    });
                }
            }
        }
    }
    for (idx, link) in dataset.calibration.iter().enumerate() {
        if link.modality_a == link.modality_b {
            out.push(Violation::SameModalityLink { link: idx });
            continue;
        }
        for (modality_id, burst) in [(link.modality_a, link.burst_a), (link.modality_b, link.burst_b)] {
            match dataset.modality(modality_id) {
                None => out.push(Violation::DanglingLink {
                    link: idx,
                    detail: format!("no modality {modality_id}"),
                }),
                Some(m) if burst >= m.bursts.len() => out.push(Violation::DanglingLink {
                    link: idx,
                    detail: format!(
                        "burst {burst} out of range, modality {modality_id} has {} bursts",
                        m.bursts.len()
                    ),
                }),
                Some(_) => {}
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{file}: parse error at line {line}, column {column}, field `{path}`: {message}")]
    Parse {
        file: String,
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Parses a JSON document, reporting the failing field path and location.
pub fn from_json_str<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, ModelError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let parsed: Result<T, _> = serde_path_to_error::deserialize(&mut de);
    match parsed {
        Ok(v) => {
            de.end().map_err(|e| ModelError::Parse {
                file: origin.to_string(),
                path: ".".into(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            Ok(v)
        }
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Err(ModelError::Parse {
                file: origin.to_string(),
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            })
        }
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, ModelError> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json_str(&text, &path.display().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ModelError> {
    let text = to_json_string(value)?;
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Serializes a dataset to its file schema and parses it back.
pub fn roundtrip(dataset: &FusionDataset) -> Result<FusionDataset, ModelError> {
    let text = to_json_string(dataset)?;
    from_json_str(&text, "<memory>")
}
