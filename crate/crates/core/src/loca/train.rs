//! Joint mini-batch training of all auto-encoders.

use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{calibration_kernel, reconstruction_kernel, stack_bursts, whitening_kernel, ResolvedLink};
use super::model::{modality_scale_prepared, Architecture, GappyLocaModel, Projection};
use super::{LossError, TrainError};
use crate::model::{validate_dataset, FusionDataset};
use crate::nets::{Activation, AdamConfig, AdamState};
use crate::evaluation::baseline::chain_registration;
use crate::rigidity::{check_patch_rigidity, required_connections};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub whitening: f64,
    pub reconstruction: f64,
    pub calibration: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            whitening: 1.0,
            reconstruction: 1.0,
            calibration: 1.0,
        }
    }
}

/// Where the burst scale used by the losses comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// The `sigma` declared by each modality of the dataset.
    #[default]
    Declared,
    /// `sqrt(λ_k)`, for datasets whose sampling scale is unknown.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Defaults to the intrinsic dimension (or one more with
    /// `reflection_relaxation`).
    pub embedding_dim: Option<usize>,
    /// Train in `d + 1` dimensions and project back to `d` afterwards.
    pub reflection_relaxation: bool,
    /// With a relaxed embedding, the fraction of epochs trained after the
    /// projection has been folded into the networks.
    pub refine_fraction: f64,
    /// Independent initializations tried; the one with the lowest total
    /// loss after `restart_epochs` epochs is trained to the end.
    pub restarts: usize,
    pub restart_epochs: usize,
    pub epochs: usize,
    pub batch_bursts: usize,
    pub adam: AdamConfig,
    /// Cosine decay of the learning rate down to this fraction of it.
    pub final_lr_fraction: f64,
    /// Global gradient-norm clipping threshold.
    pub grad_clip: f64,
    /// Fraction of the epochs trained without the calibration term. At its
    /// end every modality is rigidly registered (reflections allowed) onto
    /// its calibration partners and the map is folded into its networks.
    pub alignment_fraction: f64,
    /// Fraction of the optimizer steps over which the calibration weight
    /// ramps linearly up from zero, counted from the end of the alignment
    /// phase.
    pub calibration_warmup: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub standardize: bool,
    /// Input principal variances below this multiple of the `d`-th largest
    /// are raised to it before whitening.
    pub whitening_floor: f64,
    /// Divide each burst's reconstruction sum by its size.
    pub per_sample_reconstruction: bool,
    pub sigma_mode: SigmaMode,
    pub seed: u64,
    /// Worker cap for per-modality evaluation; results do not depend on it.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            embedding_dim: None,
            reflection_relaxation: false,
            refine_fraction: 0.0,
            restarts: 1,
            restart_epochs: 10,
            epochs: 200,
            batch_bursts: 32,
            adam: AdamConfig::default(),
            final_lr_fraction: 0.1,
            grad_clip: 10.0,
            alignment_fraction: 0.0,
            calibration_warmup: 0.0,
            hidden: vec![64, 64, 64],
            activation: Activation::Tanh,
            standardize: true,
            whitening_floor: 1.0,
            per_sample_reconstruction: false,
            sigma_mode: SigmaMode::Declared,
            seed: 0,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn resolved_embedding_dim(&self, intrinsic_dim: usize) -> usize {
        match (self.embedding_dim, self.reflection_relaxation) {
            (Some(p), _) => p,
            (None, true) => intrinsic_dim + 1,
            (None, false) => intrinsic_dim,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden.clone(),
            activation: self.activation,
            standardize: self.standardize,
            whitening_floor: self.whitening_floor,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let w = &self.weights;
        for (name, v) in [
            ("weights.whitening", w.whitening),
            ("weights.reconstruction", w.reconstruction),
            ("weights.calibration", w.calibration),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be a non-negative number, got {v}")));
            }
        }
        if self.batch_bursts == 0 {
            return Err(invalid("batch_bursts", "must be at least 1"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(invalid("adam.learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.calibration_warmup) {
            return Err(invalid("calibration_warmup", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alignment_fraction) {
            return Err(invalid("alignment_fraction", "must lie in [0, 1]"));
        }
        if !(self.whitening_floor > 0.0 && self.whitening_floor.is_finite()) {
            return Err(invalid("whitening_floor", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.refine_fraction) {
            return Err(invalid("refine_fraction", "must lie in [0, 1]"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts", "must be at least 1"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(invalid("grad_clip", "must be positive"));
        }
        Ok(())
    }
}

fn invalid(field: &str, message: impl Into<String>) -> TrainError {
    TrainError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Loss terms: per-modality whitening and reconstruction, plus calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub whitening: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub calibration: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's mini-batch steps.
    pub losses: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    /// Full-dataset losses before the first step.
    pub initial: LossBreakdown,
    /// Full-dataset losses after the last step.
    pub final_losses: LossBreakdown,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every restart candidate at the end of its probe.
    #[serde(default)]
    pub probes: Vec<ProbeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub seed: u64,
    pub total: f64,
}

impl TrainHistory {
    /// Compares everything except wall-clock times.
    pub fn same_losses(&self, other: &TrainHistory) -> bool {
        self.initial == other.initial
            && self.final_losses == other.final_losses
            && self.probes == other.probes
            && self.epochs.len() == other.epochs.len()
            && self
                .epochs
                .iter()
                .zip(&other.epochs)
                .all(|(a, b)| a.epoch == b.epoch && a.losses == b.losses)
    }

    /// CSV with one row per epoch.
    pub fn to_csv(&self) -> String {
        let k = self.initial.whitening.len();
        let mut out = String::from("epoch");
        for m in 0..k {
            out.push_str(&format!(",whitening_{m},reconstruction_{m}"));
        }
        out.push_str(",calibration,total,seconds\n");
        for e in &self.epochs {
            out.push_str(&e.epoch.to_string());
            for m in 0..k {
                out.push_str(&format!(",{},{}", e.losses.whitening[m], e.losses.reconstruction[m]));
            }
            out.push_str(&format!(",{},{},{:.3}\n", e.losses.calibration, e.losses.total, e.seconds));
        }
        out
    }
}

/// Dataset converted once into the working precision.
pub struct PreparedData<T> {
    pub intrinsic_dim: usize,
    pub bursts: Vec<Vec<Array2<T>>>,
    pub links: Vec<ResolvedLink>,
}

impl<T: Real> PreparedData<T> {
    pub fn new(dataset: &FusionDataset) -> Self {
        Self {
            intrinsic_dim: dataset.intrinsic_dim,
            bursts: dataset
                .modalities
                .iter()
                .map(|m| m.bursts.iter().map(|b| b.to_matrix()).collect())
                .collect(),
            links: dataset.resolved_links(),
        }
    }
}

/// Unweighted loss values and weighted-objective gradients of one step.
pub(crate) struct StepOutput<T> {
    pub whitening: Vec<T>,
    pub reconstruction: Vec<T>,
    pub calibration: T,
    pub encoder_grads: Vec<Vec<T>>,
    pub decoder_grads: Vec<Vec<T>>,
}

impl<T: Real> StepOutput<T> {
    fn breakdown(&self, w: &LossWeights) -> LossBreakdown {
        let white: Vec<f64> = self.whitening.iter().map(|v| v.to_f64_lossy()).collect();
        let recon: Vec<f64> = self.reconstruction.iter().map(|v| v.to_f64_lossy()).collect();
        let calib = self.calibration.to_f64_lossy();
        let total = white.iter().sum::<f64>() * w.whitening
            + recon.iter().sum::<f64>() * w.reconstruction
            + calib * w.calibration;
        LossBreakdown {
            whitening: white,
            reconstruction: recon,
            calibration: calib,
            total,
        }
    }
}

/// Options shared by every evaluation of the training objective.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ObjectiveOptions {
    pub weights: LossWeights,
    pub per_sample_reconstruction: bool,
    pub with_grads: bool,
}

/// Evaluates the weighted objective on the bursts `batches[k]` of every
/// modality `k`, with every calibration link included.
///
/// Whitening is averaged over the batch bursts of a modality and the
/// reconstruction sum is divided by the batch size, which makes both
/// unbiased estimates of the full-dataset terms.
pub(crate) fn objective<T: Real>(
    model: &GappyLocaModel<T>,
    data: &PreparedData<T>,
    batches: &[Vec<usize>],
    opts: ObjectiveOptions,
) -> Result<StepOutput<T>, LossError> {
    let k_count = model.modalities.len();
    let p = model.embedding_dim;

    let mut calib_bursts: Vec<Vec<usize>> = vec![Vec::new(); k_count];
    for &(ka, ia, kb, ib) in &data.links {
        calib_bursts[ka].push(ia);
        calib_bursts[kb].push(ib);
    }
    for v in &mut calib_bursts {
        v.sort_unstable();
        v.dedup();
    }

    // Phase 1: encode batch bursts followed by linked bursts.
    let passes: Vec<_> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let nets = &model.modalities[k];
            let refs: Vec<&Array2<T>> = batches[k]
                .iter()
                .chain(calib_bursts[k].iter())
                .map(|&i| &data.bursts[k][i])
                .collect();
            let (stacked, ranges) = stack_bursts(&refs, nets.ambient_dim);
            let pass = nets.encode_cached(stacked.view())?;
            Ok::<_, LossError>((stacked, ranges, pass))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let calib_row = |k: usize, i: usize| -> std::ops::Range<usize> {
        let pos = calib_bursts[k].binary_search(&i).expect("linked burst was stacked");
        passes[k].1[batches[k].len() + pos].clone()
    };

    let sigmas: Vec<f64> = model.modalities.iter().map(|m| m.sigma).collect();
    let (calibration, calib_grads) = calibration_kernel(
        &data.links,
        |k, i| {
            passes[k]
                .2
                .embedded
                .slice(s![calib_row(k, i), ..])
                .mean_axis(Axis(0))
                .unwrap()
        },
        &sigmas,
        data.intrinsic_dim,
    );

    // Phase 2: per-modality whitening and reconstruction, then one encoder
    // backward pass over the combined upstream gradient.
    let w = opts.weights;
    let per_modality: Vec<_> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let nets = &model.modalities[k];
            let (stacked, ranges, pass) = &passes[k];
            let nb = batches[k].len();
            let mut upstream = Array2::<T>::zeros((stacked.nrows(), p));
            let mut white = T::zero();
            let mut recon = T::zero();
            let mut dec_grads = vec![T::zero(); if opts.with_grads { nets.decoder.num_params() } else { 0 }];
            let mut enc_grads = vec![T::zero(); if opts.with_grads { nets.encoder.num_params() } else { 0 }];
            if nb > 0 {
                let inv_b = T::one() / T::from_usize(nb).unwrap();
                for r in &ranges[..nb] {
                    let (v, g) = whitening_kernel(pass.embedded.slice(s![r.clone(), ..]), nets.sigma)?;
                    white += v * inv_b;
                    if opts.with_grads && w.whitening != 0.0 {
                        let mut dst = upstream.slice_mut(s![r.clone(), ..]);
                        dst.scaled_add(T::lit(w.whitening) * inv_b, &g);
                    }
                }

                let batch_rows = ranges[nb - 1].end;
                let z = pass.embedded.slice(s![..batch_rows, ..]);
                let dec = nets.decode_cached(z)?;
                let base = 1.0 / (nb as f64 * nets.lambda * nets.ambient_dim as f64);
                let mut dy = Array2::<T>::zeros((batch_rows, nets.ambient_dim));
                for r in &ranges[..nb] {
                    let scale = if opts.per_sample_reconstruction {
                        base / r.len() as f64
                    } else {
                        base
                    };
                    let (v, g) = reconstruction_kernel(
                        stacked.slice(s![r.clone(), ..]),
                        dec.reconstructed.slice(s![r.clone(), ..]),
                        T::lit(scale),
                    );
                    recon += v;
                    dy.slice_mut(s![r.clone(), ..]).assign(&g);
                }
                if opts.with_grads && w.reconstruction != 0.0 {
                    dy *= T::lit(w.reconstruction);
                    let dz = nets.decoder_backward(&dec, dy.view(), &mut dec_grads)?;
                    let mut dst = upstream.slice_mut(s![..batch_rows, ..]);
                    dst += &dz;
                }
            }
            if opts.with_grads {
                if w.calibration != 0.0 {
                    for (gk, gi, g) in &calib_grads {
                        if *gk != k {
                            continue;
                        }
                        let r = calib_row(k, *gi);
                        let per_row = g * (T::lit(w.calibration) / T::from_usize(r.len()).unwrap());
                        let mut dst = upstream.slice_mut(s![r, ..]);
                        dst += &per_row.insert_axis(Axis(0));
                    }
                }
                nets.encoder_backward(pass, upstream.view(), &mut enc_grads)?;
            }
            Ok::<_, LossError>((white, recon, enc_grads, dec_grads))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = StepOutput {
        whitening: Vec::with_capacity(k_count),
        reconstruction: Vec::with_capacity(k_count),
        calibration,
        encoder_grads: Vec::with_capacity(k_count),
        decoder_grads: Vec::with_capacity(k_count),
    };
    for (white, recon, eg, dg) in per_modality {
        out.whitening.push(white);
        out.reconstruction.push(recon);
        out.encoder_grads.push(eg);
        out.decoder_grads.push(dg);
    }
    Ok(out)
}

/// Full-dataset loss terms of `model`.
pub fn evaluate_losses<T: Real>(
    model: &GappyLocaModel<T>,
    data: &PreparedData<T>,
    weights: LossWeights,
    per_sample_reconstruction: bool,
) -> Result<LossBreakdown, LossError> {
    let all: Vec<Vec<usize>> = data.bursts.iter().map(|b| (0..b.len()).collect()).collect();
    let out = objective(
        model,
        data,
        &all,
        ObjectiveOptions {
            weights,
            per_sample_reconstruction,
            with_grads: false,
        },
    )?;
    Ok(out.breakdown(&weights))
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, TrainError> {
    let n = threads
        .or_else(|| std::env::var("GAPPY_FUSE_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))
}

fn check_finite(b: &LossBreakdown, epoch: usize) -> Result<(), TrainError> {
    for (k, v) in b.whitening.iter().enumerate() {
        if !v.is_finite() {
            return Err(TrainError::NonFinite {
                term: "whitening",
                modality: Some(k),
                epoch,
            });
        }
    }
    for (k, v) in b.reconstruction.iter().enumerate() {
        if !v.is_finite() {
            return Err(TrainError::NonFinite {
                term: "reconstruction",
                modality: Some(k),
                epoch,
            });
        }
    }
    if !b.calibration.is_finite() {
        return Err(TrainError::NonFinite {
            term: "calibration",
            modality: None,
            epoch,
        });
    }
    Ok(())
}

/// Trains one auto-encoder per modality in a shared embedding space.
///
/// Deterministic for a given dataset and config (including `seed`),
/// independent of the worker count.
pub fn train<T: Real>(
    dataset: &FusionDataset,
    config: &TrainConfig,
) -> Result<(GappyLocaModel<T>, TrainHistory), TrainError> {
    config.validate()?;
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(TrainError::InvalidDataset(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }
    if dataset.modalities.is_empty() {
        return Err(TrainError::Config("dataset has no modalities".into()));
    }
    let report = check_patch_rigidity(dataset, None);
    if !report.verdict {
        log::warn!(
            "observation graph is not rigid (components: {:?}, deficits: {:?}); training anyway",
            report.components,
            report.deficits
        );
    }

    let pool = thread_pool(config.threads)?;
    pool.install(|| train_inner(dataset, config))
}

/// Optimizer state of one training run, resumable across phases.
struct Run<T> {
    model: GappyLocaModel<T>,
    enc_adam: Vec<AdamState<T>>,
    dec_adam: Vec<AdamState<T>>,
    rng: ChaCha8Rng,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    global_step: usize,
    epochs: Vec<EpochRecord>,
    /// Epoch count at which to align the modalities, until done.
    align_at: Option<usize>,
}

/// Step counts shared by every phase of a run.
#[derive(Clone, Copy)]
struct Schedule {
    steps_per_epoch: usize,
    total_steps: usize,
    /// First step with a non-zero calibration weight.
    calibration_start: usize,
    warmup_steps: usize,
}

impl Schedule {
    fn calibration_factor(&self, step: usize) -> f64 {
        if step < self.calibration_start {
            0.0
        } else if step - self.calibration_start < self.warmup_steps {
            (step - self.calibration_start) as f64 / self.warmup_steps as f64
        } else {
            1.0
        }
    }
}

impl<T: Real> Run<T> {
    fn new(model: GappyLocaModel<T>, data: &PreparedData<T>, config: &TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_B4_7C_11);
        let mut orders: Vec<Vec<usize>> = data.bursts.iter().map(|b| (0..b.len()).collect()).collect();
        for o in &mut orders {
            o.shuffle(&mut rng);
        }
        let cursors = vec![0usize; orders.len()];
        let mut run = Self {
            model,
            enc_adam: Vec::new(),
            dec_adam: Vec::new(),
            rng,
            orders,
            cursors,
            global_step: 0,
            epochs: Vec::new(),
            align_at: None,
        };
        run.reset_optimizer(config);
        run
    }

    fn reset_optimizer(&mut self, config: &TrainConfig) {
        self.enc_adam = self
            .model
            .modalities
            .iter()
            .map(|m| AdamState::new(m.encoder.num_params(), config.adam))
            .collect();
        self.dec_adam = self
            .model
            .modalities
            .iter()
            .map(|m| AdamState::new(m.decoder.num_params(), config.adam))
            .collect();
    }

    fn advance(
        &mut self,
        data: &PreparedData<T>,
        config: &TrainConfig,
        schedule: Schedule,
        epochs: usize,
    ) -> Result<(), TrainError> {
        let weights = config.weights;
        let k_count = self.orders.len();
        for _ in 0..epochs {
            let epoch = self.epochs.len() + 1;
            let started = Instant::now();
            let mut acc = LossBreakdown {
                whitening: vec![0.0; k_count],
                reconstruction: vec![0.0; k_count],
                ..Default::default()
            };
            for _ in 0..schedule.steps_per_epoch {
                let rng = &mut self.rng;
                let batches: Vec<Vec<usize>> = self
                    .orders
                    .iter_mut()
                    .zip(self.cursors.iter_mut())
                    .map(|(order, cursor)| {
                        let take = config.batch_bursts.min(order.len());
                        let mut batch = Vec::with_capacity(take);
                        for _ in 0..take {
                            if *cursor == order.len() {
                                order.shuffle(rng);
                                *cursor = 0;
                            }
                            batch.push(order[*cursor]);
                            *cursor += 1;
                        }
                        batch
                    })
                    .collect();
                let mut step_weights = weights;
                step_weights.calibration *= schedule.calibration_factor(self.global_step);
                let opts = ObjectiveOptions {
                    weights: step_weights,
                    per_sample_reconstruction: config.per_sample_reconstruction,
                    with_grads: true,
                };
                let out = objective(&self.model, data, &batches, opts)?;
                let b = out.breakdown(&weights);
                check_finite(&b, epoch)?;
                for k in 0..k_count {
                    acc.whitening[k] += b.whitening[k];
                    acc.reconstruction[k] += b.reconstruction[k];
                }
                acc.calibration += b.calibration;
                acc.total += b.total;

                let mut sq = T::zero();
                for g in out.encoder_grads.iter().chain(&out.decoder_grads) {
                    sq += g.iter().map(|&x| x * x).sum::<T>();
                }
                let norm = sq.sqrt().to_f64_lossy();
                if !norm.is_finite() {
                    return Err(TrainError::NonFinite {
                        term: "gradient",
                        modality: None,
                        epoch,
                    });
                }
                let clip = if norm > config.grad_clip { config.grad_clip / norm } else { 1.0 };
                let progress = self.global_step as f64 / schedule.total_steps as f64;
                let f = config.final_lr_fraction;
                let lr = config.adam.learning_rate
                    * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
                for (k, nets) in self.model.modalities.iter_mut().enumerate() {
                    let mut eg = out.encoder_grads[k].clone();
                    let mut dg = out.decoder_grads[k].clone();
                    if clip < 1.0 {
                        let c = T::lit(clip);
                        eg.iter_mut().for_each(|g| *g *= c);
                        dg.iter_mut().for_each(|g| *g *= c);
                    }
                    self.enc_adam[k].step_with_lr(nets.encoder.params_mut(), &eg, lr)?;
                    self.dec_adam[k].step_with_lr(nets.decoder.params_mut(), &dg, lr)?;
                }
                self.global_step += 1;
            }
            let inv = 1.0 / schedule.steps_per_epoch as f64;
            acc.whitening.iter_mut().for_each(|v| *v *= inv);
            acc.reconstruction.iter_mut().for_each(|v| *v *= inv);
            acc.calibration *= inv;
            acc.total *= inv;
            log::debug!("epoch {epoch}: total {:.6}", acc.total);
            self.epochs.push(EpochRecord {
                epoch,
                losses: acc,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }

    /// Trains until `target` epochs are done, aligning on the way.
    fn advance_to(
        &mut self,
        data: &PreparedData<T>,
        config: &TrainConfig,
        schedule: Schedule,
        target: usize,
    ) -> Result<(), TrainError> {
        loop {
            let done = self.epochs.len();
            if self.align_at == Some(done) {
                self.align(data, config)?;
                self.align_at = None;
            }
            if done >= target {
                return Ok(());
            }
            let stop = match self.align_at {
                Some(a) if a > done => a.min(target),
                _ => target,
            };
            self.advance(data, config, schedule, stop - done)?;
        }
    }

    /// Registers every modality onto its calibration partners and folds the
    /// rigid maps into the networks.
    fn align(&mut self, data: &PreparedData<T>, config: &TrainConfig) -> Result<(), TrainError> {
        if data.links.is_empty() {
            return Ok(());
        }
        let mut means = Vec::with_capacity(data.bursts.len());
        for (k, bursts) in data.bursts.iter().enumerate() {
            let mut own = Vec::with_capacity(bursts.len());
            for b in bursts {
                let z = self.model.modalities[k].encode(b.view())?;
                own.push(z.mean_axis(Axis(0)).unwrap().mapv(|v| v.to_f64_lossy()));
            }
            means.push(own);
        }
        let need = required_connections(data.intrinsic_dim);
        let transforms = match chain_registration(data.bursts.len(), &data.links, &means, need) {
            Ok((t, _)) => t,
            Err(e) => {
                log::warn!("skipping modality alignment: {e}");
                return Ok(());
            }
        };
        for (nets, t) in self.model.modalities.iter_mut().zip(&transforms) {
            let q = t.rotation.mapv(T::lit);
            let shift = t.translation.mapv(T::lit);
            let q_inv = q.t().to_owned();
            let back = -q_inv.dot(&shift);
            nets.map_embedding(q.view(), shift.view(), q_inv.view(), back.view())?;
        }
        self.reset_optimizer(config);
        Ok(())
    }

    /// Fits the PCA projection of all burst-mean embeddings onto `d`.
    fn fit_projection(&mut self, data: &PreparedData<T>) -> Result<(), TrainError> {
        let d = data.intrinsic_dim;
        let p = self.model.embedding_dim;
        let mut means = Vec::new();
        for (k, bursts) in data.bursts.iter().enumerate() {
            for b in bursts {
                let z = self.model.modalities[k].encode(b.view())?;
                means.push(z.mean_axis(Axis(0)).unwrap());
            }
        }
        let mut stacked = Array2::<T>::zeros((means.len(), p));
        for (i, m) in means.iter().enumerate() {
            stacked.row_mut(i).assign(m);
        }
        self.model.projection = Some(Projection::fit(stacked.view(), d)?);
        Ok(())
    }
}

/// Seed of restart candidate `r`; candidate 0 uses the configured seed.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        crate::scenarios::derive_seed(seed, 0xA11C_0000 + r as u64)
    }
}

fn train_inner<T: Real>(
    dataset: &FusionDataset,
    config: &TrainConfig,
) -> Result<(GappyLocaModel<T>, TrainHistory), TrainError> {
    let d = dataset.intrinsic_dim;
    let data = PreparedData::<T>::new(dataset);
    let sigmas: Vec<f64> = match config.sigma_mode {
        SigmaMode::Declared => dataset.modalities.iter().map(|m| m.sigma).collect(),
        SigmaMode::Estimated => data
            .bursts
            .iter()
            .map(|b| modality_scale_prepared(b, d).map(|l| l.to_f64_lossy().sqrt()))
            .collect::<Result<_, _>>()?,
    };
    let p = config.resolved_embedding_dim(d);
    let weights = config.weights;

    let largest = data.bursts.iter().map(Vec::len).max().unwrap_or(0);
    let steps_per_epoch = largest.div_ceil(config.batch_bursts).max(1);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let refine = if p > d {
        ((config.refine_fraction * config.epochs as f64).round() as usize).min(config.epochs)
    } else {
        0
    };
    let first_phase = config.epochs - refine;
    let align_at = ((config.alignment_fraction * config.epochs as f64).round() as usize).min(first_phase);
    let schedule = Schedule {
        steps_per_epoch,
        total_steps,
        calibration_start: align_at * steps_per_epoch,
        warmup_steps: (config.calibration_warmup * total_steps as f64).round() as usize,
    };
    let probe = config.restart_epochs.min(first_phase);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Run<T>, LossBreakdown)> = None;
    for r in 0..config.restarts.max(1) {
        let seed = restart_seed(config.seed, r);
        let model = GappyLocaModel::<T>::init(dataset, &data.bursts, &sigmas, p, &config.architecture(), seed)?;
        let initial = evaluate_losses(&model, &data, weights, config.per_sample_reconstruction)?;
        check_finite(&initial, 0)?;
        let mut run = Run::new(model, &data, config, seed);
        if config.alignment_fraction > 0.0 {
            run.align_at = Some(align_at);
        }
        if config.restarts > 1 {
            run.advance_to(&data, config, schedule, probe)?;
            let probed = evaluate_losses(&run.model, &data, weights, config.per_sample_reconstruction)?;
            check_finite(&probed, probe)?;
            log::info!("restart {r} (seed {seed}): total loss {:.6} after {probe} epochs", probed.total);
            history.probes.push(ProbeRecord {
                seed,
                total: probed.total,
            });
            if best.as_ref().is_some_and(|(t, _, _)| *t <= probed.total) {
                continue;
            }
            best = Some((probed.total, run, initial));
        } else {
            best = Some((0.0, run, initial));
        }
    }
    let (_, mut run, initial) = best.expect("at least one candidate");
    history.initial = initial;
    run.advance_to(&data, config, schedule, first_phase)?;

    if p > d {
        run.fit_projection(&data)?;
        if refine > 0 {
            run.model.fold_projection()?;
            run.reset_optimizer(config);
            run.advance_to(&data, config, schedule, config.epochs)?;
        }
    }
    history.final_losses = evaluate_losses(&run.model, &data, weights, config.per_sample_reconstruction)?;
    check_finite(&history.final_losses, config.epochs)?;
    history.epochs = run.epochs;
    Ok((run.model, history))
}
