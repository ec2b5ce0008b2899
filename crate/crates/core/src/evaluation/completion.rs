//! Filling unknown entries of a distance matrix from learned embeddings.

use ndarray::{Array1, Array2};

use super::EvalError;
use crate::loca::{embed_dataset, GappyLocaModel};
use crate::model::FusionDataset;
use crate::Real;

/// Symmetric distance matrix with a mask of known entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDistanceMatrix {
    pub values: Array2<f64>,
    pub known: Array2<bool>,
}

impl PartialDistanceMatrix {
    /// `n x n` matrix with only the zero diagonal known.
    pub fn new(n: usize) -> Self {
        Self {
            values: Array2::zeros((n, n)),
            known: Array2::from_shape_fn((n, n), |(i, j)| i == j),
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a known distance in both triangles.
    pub fn set(&mut self, i: usize, j: usize, distance: f64) {
        self.values[[i, j]] = distance;
        self.values[[j, i]] = distance;
        self.known[[i, j]] = true;
        self.known[[j, i]] = true;
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let n = self.len();
        if self.values.ncols() != n || self.known.dim() != (n, n) {
            return Err(EvalError::InvalidPartial("matrix and mask must be square and equal-sized".into()));
        }
        for i in 0..n {
            if !self.known[[i, i]] || self.values[[i, i]] != 0.0 {
                return Err(EvalError::InvalidPartial(format!("diagonal entry {i} must be known and zero")));
            }
            for j in 0..n {
                if self.known[[i, j]] != self.known[[j, i]] {
                    return Err(EvalError::InvalidPartial(format!("mask asymmetric at ({i}, {j})")));
                }
                if self.known[[i, j]] && !(self.values[[i, j]] >= 0.0) {
                    return Err(EvalError::InvalidPartial(format!("negative or NaN distance at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Fills unknown entries with distances between `points`; known entries
/// are kept. `points[i]` is `None` when row `i` has no embedding.
pub fn complete_from_points(
    points: &[Option<Array1<f64>>],
    partial: &PartialDistanceMatrix,
) -> Result<Array2<f64>, EvalError> {
    partial.validate()?;
    let n = partial.len();
    if points.len() != n {
        return Err(EvalError::Shape(format!("{} points for a {n} x {n} matrix", points.len())));
    }
    let mut out = partial.values.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            if partial.known[[i, j]] {
                continue;
            }
            let a = points[i].as_ref().ok_or(EvalError::Unmapped(i))?;
            let b = points[j].as_ref().ok_or(EvalError::Unmapped(j))?;
            let d = (a - b).mapv(|v| v * v).sum().sqrt();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    Ok(out)
}

/// Completes `partial` using the mean embeddings of `model` on `dataset`.
///
/// `index[i]` lists the `(modality_id, burst)` pairs that observe row `i`;
/// rows seen by several modalities use the average of their mean
/// embeddings.
pub fn complete_distance_matrix<T: Real>(
    model: &GappyLocaModel<T>,
    dataset: &FusionDataset,
    index: &[Vec<(usize, usize)>],
    partial: &PartialDistanceMatrix,
) -> Result<Array2<f64>, EvalError> {
    let embedded = embed_dataset(model, dataset)?;
    let mut points = Vec::with_capacity(index.len());
    for (row, owners) in index.iter().enumerate() {
        if owners.is_empty() {
            points.push(None);
            continue;
        }
        let mut acc = Array1::<f64>::zeros(model.output_dim());
        for &(modality_id, burst) in owners {
            let k = dataset.modality_index(modality_id).ok_or(EvalError::Unmapped(row))?;
            let e = embedded[k].get(burst).ok_or(EvalError::Unmapped(row))?;
            acc += &e.mean.mapv(|v| v.to_f64_lossy());
        }
        points.push(Some(acc / owners.len() as f64));
    }
    complete_from_points(&points, partial)
}
