//! The whitening, reconstruction and calibration losses with their exact
//! gradients.
//!
//! Each loss is written as "value plus gradient with respect to the embedded
//! (or reconstructed) samples"; the network backward passes turn those into
//! parameter gradients. The trainer reuses the same kernels on mini-batches.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::model::{GappyLocaModel, ModalityNets};
use super::LossError;
use crate::evaluation::linalg::sample_covariance;
use crate::model::FusionDataset;
use crate::Real;

/// Unbiased covariance of an embedded burst (`M x p`, divisor `M - 1`).
pub fn burst_covariance<T: Real>(embedded: ArrayView2<T>) -> Result<Array2<T>, LossError> {
    if embedded.nrows() < 2 {
        return Err(LossError::BurstTooSmall(embedded.nrows()));
    }
    Ok(sample_covariance(embedded))
}

/// `‖Ĉ(z)/σ² − I‖_F²` and its gradient with respect to the rows of `z`.
pub fn whitening_kernel<T: Real>(z: ArrayView2<T>, sigma: f64) -> Result<(T, Array2<T>), LossError> {
    let m = z.nrows();
    if m < 2 {
        return Err(LossError::BurstTooSmall(m));
    }
    let p = z.ncols();
    let inv_var = T::lit(1.0 / (sigma * sigma));
    let mean = z.mean_axis(Axis(0)).unwrap();
    let centered = &z - &mean.insert_axis(Axis(0));
    let denom = T::from_usize(m - 1).unwrap();
    let cov = centered.t().dot(&centered) / denom;
    let mut resid = cov * inv_var;
    for i in 0..p {
        resid[[i, i]] -= T::one();
    }
    let value = resid.iter().map(|&r| r * r).sum::<T>();
    // dL/dC = 2 R / σ²;  dL/dz_m = 2/(M−1) (z_m − z̄) dL/dC  (R symmetric)
    let coef = T::lit(2.0) * inv_var * T::lit(2.0) / denom;
    let grad = centered.dot(&resid) * coef;
    Ok((value, grad))
}

/// Whitening loss of one burst, with encoder parameter gradients.
///
/// `burst` holds raw observations (`M x D_k`).
pub fn whitening_loss<T: Real>(
    nets: &ModalityNets<T>,
    burst: ArrayView2<T>,
    sigma: f64,
) -> Result<(T, Vec<T>), LossError> {
    let pass = nets.encode_cached(burst)?;
    let (value, up) = whitening_kernel(pass.embedded.view(), sigma)?;
    let mut grads = vec![T::zero(); nets.encoder.num_params()];
    nets.encoder_backward(&pass, up.view(), &mut grads)?;
    Ok((value, grads))
}

/// Value and gradients of a reconstruction loss evaluation.
#[derive(Debug, Clone)]
pub struct ReconstructionOutput<T> {
    pub value: T,
    pub encoder_grads: Vec<T>,
    pub decoder_grads: Vec<T>,
}

/// `Σ_y ‖y − γ(z)‖² · scale` and its gradient with respect to the
/// reconstruction.
pub(crate) fn reconstruction_kernel<T: Real>(
    y: ArrayView2<T>,
    reconstructed: ArrayView2<T>,
    scale: T,
) -> (T, Array2<T>) {
    let resid = &reconstructed - &y;
    let value = resid.iter().map(|&r| r * r).sum::<T>() * scale;
    let grad = resid * (T::lit(2.0) * scale);
    (value, grad)
}

/// Reconstruction loss of a whole modality:
/// `(1/N_k) Σ_i Σ_{y ∈ Y_i} ‖y − γ(ρ(y))‖² / (λ_k D_k)`.
///
/// With `per_sample` each burst's sum is additionally divided by its size.
pub fn reconstruction_loss<T: Real>(
    nets: &ModalityNets<T>,
    bursts: &[Array2<T>],
    lambda: f64,
    per_sample: bool,
) -> Result<ReconstructionOutput<T>, LossError> {
    if !(lambda > 0.0) {
        return Err(LossError::Config(format!("lambda must be positive, got {lambda}")));
    }
    if bursts.is_empty() {
        return Err(LossError::Empty);
    }
    let n = bursts.len() as f64;
    let dk = nets.ambient_dim as f64;
    let mut out = ReconstructionOutput {
        value: T::zero(),
        encoder_grads: vec![T::zero(); nets.encoder.num_params()],
        decoder_grads: vec![T::zero(); nets.decoder.num_params()],
    };
    for b in bursts {
        let mut scale = 1.0 / (n * lambda * dk);
        if per_sample {
            scale /= b.nrows() as f64;
        }
        let enc = nets.encode_cached(b.view())?;
        let dec = nets.decode_cached(enc.embedded.view())?;
        let (v, up) = reconstruction_kernel(b.view(), dec.reconstructed.view(), T::lit(scale));
        out.value += v;
        let dz = nets.decoder_backward(&dec, up.view(), &mut out.decoder_grads)?;
        nets.encoder_backward(&enc, dz.view(), &mut out.encoder_grads)?;
    }
    Ok(out)
}

/// A calibration link resolved to modality positions:
/// `(modality a, burst a, modality b, burst b)`.
pub type ResolvedLink = (usize, usize, usize, usize);

/// `(1/|I|) Σ ‖ρ̄_a − ρ̄_b‖² / (d σ̄²)` and its gradient with respect to the
/// two burst means of every link.
///
/// `means[k][i]` is the mean embedding of burst `i` of modality `k`; the
/// returned gradient has the same layout (zero for unlinked bursts is
/// represented by absence from the map).
pub(crate) fn calibration_kernel<T: Real>(
    links: &[ResolvedLink],
    mean_of: impl Fn(usize, usize) -> ndarray::Array1<T>,
    sigmas: &[f64],
    intrinsic_dim: usize,
) -> (T, Vec<(usize, usize, ndarray::Array1<T>)>) {
    if links.is_empty() {
        return (T::zero(), Vec::new());
    }
    let count = T::from_usize(links.len()).unwrap();
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(2 * links.len());
    for &(ka, ia, kb, ib) in links {
        let var = 0.5 * (sigmas[ka] * sigmas[ka] + sigmas[kb] * sigmas[kb]);
        let norm = T::lit(1.0 / (intrinsic_dim as f64 * var));
        let diff = mean_of(ka, ia) - mean_of(kb, ib);
        value += diff.dot(&diff) * norm / count;
        let g = diff * (T::lit(2.0) * norm / count);
        grads.push((ka, ia, g.clone()));
        grads.push((kb, ib, -g));
    }
    (value, grads)
}

/// Calibration loss over all links with encoder gradients per modality.
///
/// `bursts[k]` are the prepared bursts of modality position `k`. Returns
/// zero (and zero gradients) when there are no links.
pub fn calibration_loss_prepared<T: Real>(
    model: &GappyLocaModel<T>,
    bursts: &[Vec<Array2<T>>],
    links: &[ResolvedLink],
) -> Result<(T, Vec<Vec<T>>), LossError> {
    let mut grads: Vec<Vec<T>> = model
        .modalities
        .iter()
        .map(|m| vec![T::zero(); m.encoder.num_params()])
        .collect();
    if links.is_empty() {
        log::warn!("no calibration links: calibration loss is zero and the patches cannot be rigidified");
        return Ok((T::zero(), grads));
    }
    // Only linked bursts are needed; embed each once.
    let mut passes = std::collections::BTreeMap::new();
    for &(ka, ia, kb, ib) in links {
        for (k, i) in [(ka, ia), (kb, ib)] {
            if let std::collections::btree_map::Entry::Vacant(e) = passes.entry((k, i)) {
                let b = bursts
                    .get(k)
                    .and_then(|v| v.get(i))
                    .ok_or_else(|| LossError::Config(format!("link references missing burst {i} of modality position {k}")))?;
                e.insert(model.modalities[k].encode_cached(b.view())?);
            }
        }
    }
    let sigmas: Vec<f64> = model.modalities.iter().map(|m| m.sigma).collect();
    let (value, mean_grads) = calibration_kernel(
        links,
        |k, i| passes[&(k, i)].embedded.mean_axis(Axis(0)).unwrap(),
        &sigmas,
        model.intrinsic_dim,
    );
    for (k, i, g) in mean_grads {
        let pass = &passes[&(k, i)];
        let m = pass.embedded.nrows();
        let per_row = g / T::from_usize(m).unwrap();
        let up = per_row.broadcast((m, model.embedding_dim)).unwrap().to_owned();
        model.modalities[k].encoder_backward(pass, up.view(), &mut grads[k])?;
    }
    Ok((value, grads))
}

/// Calibration loss of `model` on the links of `dataset`.
pub fn calibration_loss<T: Real>(
    model: &GappyLocaModel<T>,
    dataset: &FusionDataset,
) -> Result<(T, Vec<Vec<T>>), LossError> {
    let bursts: Vec<Vec<Array2<T>>> = dataset
        .modalities
        .iter()
        .map(|m| m.bursts.iter().map(|b| b.to_matrix()).collect())
        .collect();
    calibration_loss_prepared(model, &bursts, &dataset.resolved_links())
}

/// Mean embedding of each burst plus the per-sample embeddings.
#[derive(Debug, Clone)]
pub struct BurstEmbedding<T> {
    pub mean: ndarray::Array1<T>,
    pub samples: Array2<T>,
}

/// Embeds every burst of every modality.
pub fn embed_dataset<T: Real>(
    model: &GappyLocaModel<T>,
    dataset: &FusionDataset,
) -> Result<Vec<Vec<BurstEmbedding<T>>>, LossError> {
    let mut out = Vec::with_capacity(dataset.modalities.len());
    for m in &dataset.modalities {
        let k = model
            .modality_index(m.modality_id)
            .ok_or_else(|| LossError::Config(format!("model has no modality {}", m.modality_id)))?;
        if model.modalities[k].ambient_dim != m.ambient_dim {
            return Err(LossError::Config(format!(
                "modality {}: dataset ambient_dim {} but model expects {}",
                m.modality_id, m.ambient_dim, model.modalities[k].ambient_dim
            )));
        }
        let mut per = Vec::with_capacity(m.bursts.len());
        for b in &m.bursts {
            let samples = model.embed(k, b.to_matrix::<T>().view())?;
            let mean = samples.mean_axis(Axis(0)).ok_or(LossError::Empty)?;
            per.push(BurstEmbedding { mean, samples });
        }
        out.push(per);
    }
    Ok(out)
}

/// Stacks the rows of several bursts; returns the matrix and row ranges.
pub(crate) fn stack_bursts<T: Real>(
    bursts: &[&Array2<T>],
    width: usize,
) -> (Array2<T>, Vec<std::ops::Range<usize>>) {
    let total: usize = bursts.iter().map(|b| b.nrows()).sum();
    let mut out = Array2::zeros((total, width));
    let mut ranges = Vec::with_capacity(bursts.len());
    let mut row = 0;
    for b in bursts {
        out.slice_mut(s![row..row + b.nrows(), ..]).assign(*b);
        ranges.push(row..row + b.nrows());
        row += b.nrows();
    }
    (out, ranges)
}
