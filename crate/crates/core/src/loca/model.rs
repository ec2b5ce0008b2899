//! Encoder/decoder pairs sharing one embedding space.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::LossError;
use crate::evaluation::linalg::{sample_covariance, sym_eig_small};
use crate::model::{FusionDataset, ModalityData};
use crate::nets::{Activation, ForwardCache, Mlp};
use crate::Real;

/// Fixed affine standardization wrapped around the trainable networks.
///
/// Inputs to an encoder are whitened with the principal axes of the whole
/// modality cloud, `x = A (y - mean)`, and the encoder output is multiplied
/// by `output_scale`, which converts one local unit of the whitened cloud
/// into latent units. The decoder applies the inverses. None of these are
/// trained; they only put every modality on a comparable numeric scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    /// `D x D`, maps centered observations to whitened coordinates.
    pub whiten: Array2<T>,
    /// `D x D`, inverse of `whiten`.
    pub unwhiten: Array2<T>,
    pub output_scale: T,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(ambient_dim: usize) -> Self {
        Self {
            mean: Array1::zeros(ambient_dim),
            whiten: Array2::eye(ambient_dim),
            unwhiten: Array2::eye(ambient_dim),
            output_scale: T::one(),
        }
    }

    /// Fits the standardization of one modality from its bursts.
    ///
    /// `floor` regularizes the whitening: principal variances below
    /// `floor` times the `d`-th largest are raised to that value, so
    /// directions beyond the intrinsic ones are never amplified more than
    /// the weakest intrinsic direction.
    pub fn fit(
        bursts: &[Array2<T>],
        intrinsic_dim: usize,
        sigma: f64,
        floor: f64,
    ) -> Result<Self, LossError> {
        let ambient = bursts.first().map(|b| b.ncols()).ok_or(LossError::Empty)?;
        let total: usize = bursts.iter().map(|b| b.nrows()).sum();
        let mut all = Array2::<T>::zeros((total, ambient));
        let mut row = 0;
        for b in bursts {
            all.slice_mut(ndarray::s![row..row + b.nrows(), ..]).assign(b);
            row += b.nrows();
        }
        let mean = all.mean_axis(Axis(0)).unwrap();
        let cov = sample_covariance(all.view());
        let eig = sym_eig_small(cov.view())?;
        let d = intrinsic_dim.min(ambient).max(1);
        let reference = eig.values[d - 1].max(T::min_positive_value());
        let radii: Vec<T> = eig
            .values
            .iter()
            .map(|&v| v.max(T::lit(floor) * reference).sqrt())
            .collect();
        let mut whiten = eig.vectors.t().to_owned();
        let mut unwhiten = eig.vectors.clone();
        for (i, &r) in radii.iter().enumerate() {
            whiten.row_mut(i).mapv_inplace(|x| x / r);
            unwhiten.column_mut(i).mapv_inplace(|x| x * r);
        }

        // Local spread of a burst in whitened coordinates, per latent direction.
        let mut local: Vec<T> = Vec::with_capacity(bursts.len());
        for b in bursts {
            let centered = b - &mean.view().insert_axis(Axis(0));
            let cw = sample_covariance(centered.dot(&whiten.t()).view());
            let e = sym_eig_small(cw.view())?;
            let mean_top = e.values.iter().take(d).fold(T::zero(), |acc, &v| acc + v.max(T::zero()))
                / T::from_usize(d).unwrap();
            local.push(mean_top);
        }
        let spread = lower_median(&mut local).unwrap_or(T::one());
        let output_scale = if spread > T::zero() {
            T::lit(sigma) / spread.sqrt()
        } else {
            T::one()
        };
        Ok(Self {
            mean,
            whiten,
            unwhiten,
            output_scale,
        })
    }

    /// `A (y - mean)` for every row.
    pub fn to_whitened(&self, y: ArrayView2<T>) -> Array2<T> {
        (&y - &self.mean.view().insert_axis(Axis(0))).dot(&self.whiten.t())
    }

    /// Inverse of [`Standardizer::to_whitened`].
    pub fn from_whitened(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.unwhiten.t()) + &self.mean.view().insert_axis(Axis(0))
    }
}

/// Lower median (element `(n - 1) / 2` after sorting); `None` when empty.
pub fn lower_median<T: Real>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(values[(values.len() - 1) / 2])
}

/// Encoder `ρ^k` and decoder `γ^k` of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityNets<T> {
    pub modality_id: usize,
    pub ambient_dim: usize,
    pub sigma: f64,
    /// Median `d`-th eigenvalue of the observation burst covariances.
    pub lambda: f64,
    pub standardizer: Standardizer<T>,
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
}

/// Encoder forward pass with the intermediates needed for gradients.
pub struct EncoderPass<T> {
    pub cache: ForwardCache<T>,
    /// Embedded samples in latent units.
    pub embedded: Array2<T>,
}

pub struct DecoderPass<T> {
    pub cache: ForwardCache<T>,
    pub reconstructed: Array2<T>,
}

impl<T: Real> ModalityNets<T> {
    pub fn encode(&self, y: ArrayView2<T>) -> Result<Array2<T>, LossError> {
        let x = self.standardizer.to_whitened(y);
        Ok(self.encoder.forward(x.view())? * self.standardizer.output_scale)
    }

    pub fn encode_cached(&self, y: ArrayView2<T>) -> Result<EncoderPass<T>, LossError> {
        let x = self.standardizer.to_whitened(y);
        let cache = self.encoder.forward_cached(x.view())?;
        let embedded = cache.output() * self.standardizer.output_scale;
        Ok(EncoderPass { cache, embedded })
    }

    /// Accumulates encoder parameter gradients for `upstream = dL/d(embedded)`.
    pub fn encoder_backward(
        &self,
        pass: &EncoderPass<T>,
        upstream: ArrayView2<T>,
        grads: &mut [T],
    ) -> Result<(), LossError> {
        let scaled = &upstream * self.standardizer.output_scale;
        self.encoder.backward_into(&pass.cache, scaled.view(), grads)?;
        Ok(())
    }

    pub fn decode(&self, z: ArrayView2<T>) -> Result<Array2<T>, LossError> {
        let inner = &z / self.standardizer.output_scale;
        let out = self.decoder.forward(inner.view())?;
        Ok(self.standardizer.from_whitened(out.view()))
    }

    pub fn decode_cached(&self, z: ArrayView2<T>) -> Result<DecoderPass<T>, LossError> {
        let inner = &z / self.standardizer.output_scale;
        let cache = self.decoder.forward_cached(inner.view())?;
        let reconstructed = self.standardizer.from_whitened(cache.output().view());
        Ok(DecoderPass {
            cache,
            reconstructed,
        })
    }

    /// Accumulates decoder gradients for `upstream = dL/d(reconstructed)` and
    /// returns `dL/dz`.
    pub fn decoder_backward(
        &self,
        pass: &DecoderPass<T>,
        upstream: ArrayView2<T>,
        grads: &mut [T],
    ) -> Result<Array2<T>, LossError> {
        let inner_up = upstream.dot(&self.standardizer.unwhiten);
        let dz_inner = self.decoder.backward_into(&pass.cache, inner_up.view(), grads)?;
        Ok(dz_inner / self.standardizer.output_scale)
    }
}

/// Linear map from the training embedding dimension down to `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub mean: Array1<T>,
    /// `p x d`, orthonormal columns.
    pub basis: Array2<T>,
}

impl<T: Real> Projection<T> {
    pub fn apply(&self, z: ArrayView2<T>) -> Array2<T> {
        (&z - &self.mean.view().insert_axis(Axis(0))).dot(&self.basis)
    }

    /// Principal-components projection of `points` onto `d` dimensions.
    pub fn fit(points: ArrayView2<T>, d: usize) -> Result<Self, LossError> {
        let mean = points.mean_axis(Axis(0)).ok_or(LossError::Empty)?;
        let cov = sample_covariance(points);
        let eig = sym_eig_small(cov.view())?;
        let basis = eig.vectors.slice(ndarray::s![.., ..d]).to_owned();
        Ok(Self { mean, basis })
    }
}

/// The `K` trained auto-encoders with their shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct GappyLocaModel<T> {
    pub intrinsic_dim: usize,
    pub embedding_dim: usize,
    pub modalities: Vec<ModalityNets<T>>,
    /// Present when training used more dimensions than `intrinsic_dim`.
    pub projection: Option<Projection<T>>,
}

/// Network shape and standardization choices used to build a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub standardize: bool,
    pub whitening_floor: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            activation: Activation::Tanh,
            standardize: true,
            whitening_floor: 1.0,
        }
    }
}

impl<T: Real> GappyLocaModel<T> {
    /// Freshly initialized networks for every modality of `dataset`.
    ///
    /// `sigmas[k]` is the burst scale the losses use for modality `k`.
    pub fn init(
        dataset: &FusionDataset,
        bursts: &[Vec<Array2<T>>],
        sigmas: &[f64],
        embedding_dim: usize,
        arch: &Architecture,
        seed: u64,
    ) -> Result<Self, LossError> {
        let d = dataset.intrinsic_dim;
        if embedding_dim < d {
            return Err(LossError::Config(format!(
                "embedding dimension {embedding_dim} below intrinsic dimension {d}"
            )));
        }
        let mut modalities = Vec::with_capacity(dataset.modalities.len());
        for (k, m) in dataset.modalities.iter().enumerate() {
            let lambda = modality_scale_prepared(&bursts[k], d)?;
            let standardizer = if arch.standardize {
                Standardizer::fit(&bursts[k], d, sigmas[k], arch.whitening_floor)?
            } else {
                Standardizer::identity(m.ambient_dim)
            };
            let mut enc_sizes = vec![m.ambient_dim];
            enc_sizes.extend(&arch.hidden);
            enc_sizes.push(embedding_dim);
            let mut dec_sizes = vec![embedding_dim];
            dec_sizes.extend(&arch.hidden);
            dec_sizes.push(m.ambient_dim);
            let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(2 * k as u64);
            modalities.push(ModalityNets {
                modality_id: m.modality_id,
                ambient_dim: m.ambient_dim,
                sigma: sigmas[k],
                lambda: lambda.to_f64_lossy(),
                standardizer,
                encoder: Mlp::init(&enc_sizes, arch.activation, base)?,
                decoder: Mlp::init(&dec_sizes, arch.activation, base + 1)?,
            });
        }
        Ok(Self {
            intrinsic_dim: d,
            embedding_dim,
            modalities,
            projection: None,
        })
    }

    pub fn modality_index(&self, modality_id: usize) -> Option<usize> {
        self.modalities.iter().position(|m| m.modality_id == modality_id)
    }

    /// Embeds observations of modality position `k`, applying the final
    /// projection when one is present.
    pub fn embed(&self, k: usize, y: ArrayView2<T>) -> Result<Array2<T>, LossError> {
        let z = self.modalities[k].encode(y)?;
        Ok(match &self.projection {
            Some(p) => p.apply(z.view()),
            None => z,
        })
    }

    /// Absorbs the projection into the networks, leaving a model whose
    /// embedding dimension is the projection's output dimension.
    ///
    /// Encoders compose exactly with the projection. Decoders are fed
    /// `mean + basis z` instead of `z`, which agrees with the old decoder on
    /// the projected subspace.
    pub fn fold_projection(&mut self) -> Result<(), LossError> {
        let Some(proj) = self.projection.take() else {
            return Ok(());
        };
        let bt = proj.basis.t().to_owned();
        let offset = -bt.dot(&proj.mean);
        for nets in &mut self.modalities {
            nets.map_embedding(bt.view(), offset.view(), proj.basis.view(), proj.mean.view())?;
        }
        self.embedding_dim = proj.basis.ncols();
        Ok(())
    }

    /// Output dimension of [`GappyLocaModel::embed`].
    pub fn output_dim(&self) -> usize {
        match &self.projection {
            Some(p) => p.basis.ncols(),
            None => self.embedding_dim,
        }
    }
}

impl<T: Real> ModalityNets<T> {
    /// Rewrites the outer layers so the encoder emits `a z + offset` where
    /// it used to emit `z`, and the decoder reads a new code `w` as the old
    /// code `a_inv w + inv_offset`.
    pub fn map_embedding(
        &mut self,
        a: ArrayView2<T>,
        offset: ArrayView1<T>,
        a_inv: ArrayView2<T>,
        inv_offset: ArrayView1<T>,
    ) -> Result<(), LossError> {
        let s = self.standardizer.output_scale;
        let last = self.encoder.num_layers() - 1;
        let (w, b) = self.encoder.layer(last);
        let w_new = a.dot(&w);
        let b_new = a.dot(&b) + &offset.mapv(|v| v / s);
        self.encoder = self.encoder.with_layer(last, w_new, b_new)?;

        let (w, b) = self.decoder.layer(0);
        let w_new = w.dot(&a_inv);
        let b_new = &b + &w.dot(&inv_offset).mapv(|v| v / s);
        self.decoder = self.decoder.with_layer(0, w_new, b_new)?;
        Ok(())
    }
}

/// `λ_k`: lower median over bursts of the `d`-th largest eigenvalue of the
/// observation-space burst covariance.
pub fn modality_scale(modality: &ModalityData, d: usize) -> Result<f64, LossError> {
    let bursts: Vec<Array2<f64>> = modality.bursts.iter().map(|b| b.to_matrix()).collect();
    if modality.ambient_dim < d {
        return Err(LossError::Config(format!(
            "intrinsic dimension {d} exceeds ambient dimension {} of modality {}",
            modality.ambient_dim, modality.modality_id
        )));
    }
    modality_scale_prepared(&bursts, d)
}

pub(crate) fn modality_scale_prepared<T: Real>(bursts: &[Array2<T>], d: usize) -> Result<T, LossError> {
    if bursts.is_empty() {
        return Err(LossError::Empty);
    }
    let mut eigs = Vec::with_capacity(bursts.len());
    for b in bursts {
        if b.nrows() < 2 {
            return Err(LossError::BurstTooSmall(b.nrows()));
        }
        if d == 0 || d > b.ncols() {
            return Err(LossError::Config(format!(
                "intrinsic dimension {d} exceeds ambient dimension {}",
                b.ncols()
            )));
        }
        let c = sample_covariance(b.view());
        let e = sym_eig_small(c.view())?;
        eigs.push(e.values[d - 1]);
    }
    Ok(lower_median(&mut eigs).unwrap())
}
