//! A small feed-forward network engine: initialization, batched forward
//! pass, reverse-mode gradients and Adam updates.
//!
//! Parameters of an [`Mlp`] live in one flat vector. Layer `l` with fan-in
//! `a` and fan-out `b` occupies `a * b` weights stored row-major as a
//! `b x a` matrix, followed by `b` biases. Gradients use the same layout, so
//! optimizers and checkpoints only ever see flat slices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("network needs at least two layer sizes, got {0}")]
    TooFewLayers(usize),
    #[error("layer sizes must be positive: {0:?}")]
    ZeroWidth(Vec<usize>),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                // log(1 + e^z) without overflow
                if z > T::zero() {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    #[inline]
    fn derivative<T: Real>(self, z: T, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Softplus => T::one() / (T::one() + (-z).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }
}

/// Fully connected network; the activation is applied on every hidden layer
/// and the output layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<T>,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `layer_inputs[l]` is the input of layer `l`; the last entry is the output.
    layer_inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.layer_inputs.last().expect("cache holds at least the input")
    }
}

fn check_sizes(sizes: &[usize]) -> Result<(), NetError> {
    if sizes.len() < 2 {
        return Err(NetError::TooFewLayers(sizes.len()));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(NetError::ZeroWidth(sizes.to_vec()));
    }
    Ok(())
}

/// Number of parameters of a network with these layer sizes.
pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self, NetError> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(parameter_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            params.extend((0..fan_in * fan_out).map(|_| T::lit(normal.sample(&mut rng))));
            params.extend(std::iter::repeat_n(T::zero(), fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    /// Builds a network from an explicit parameter vector.
    pub fn from_params(
        sizes: &[usize],
        activation: Activation,
        params: Vec<T>,
    ) -> Result<Self, NetError> {
        check_sizes(sizes)?;
        let expected = parameter_count(sizes);
        if params.len() != expected {
            return Err(NetError::Shape(format!(
                "expected {expected} parameters for sizes {sizes:?}, got {}",
                params.len()
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        parameter_count(&self.sizes[..=layer])
    }

    /// Weight matrix (`fan_out x fan_in`) and bias of `layer`.
    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, T>, ArrayView1<'_, T>) {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out])
            .expect("layer weight view");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Mutable weight matrix of `layer`.
    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, T> {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayViewMut2::from_shape((fan_out, fan_in), &mut self.params[off..off + fan_in * fan_out])
            .expect("layer weight view")
    }

    /// Mutable bias of `layer`.
    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer) + fan_in * fan_out;
        &mut self.params[off..off + fan_out]
    }

    /// Copy of the network with `layer` replaced. The new weight may change
    /// the layer's fan-in only for the first layer and its fan-out only for
    /// the last one.
    pub fn with_layer(&self, layer: usize, weight: Array2<T>, bias: Array1<T>) -> Result<Self, NetError> {
        let last = self.num_layers() - 1;
        if layer > last {
            return Err(NetError::Shape(format!("layer {layer} out of range")));
        }
        let (fan_out, fan_in) = weight.dim();
        let mut sizes = self.sizes.clone();
        if (layer != 0 && fan_in != sizes[layer]) || (layer != last && fan_out != sizes[layer + 1]) {
            return Err(NetError::Shape(format!(
                "replacement weight {fan_out}x{fan_in} does not fit between neighbouring layers"
            )));
        }
        if bias.len() != fan_out {
            return Err(NetError::Shape(format!("bias length {} but fan-out {fan_out}", bias.len())));
        }
        sizes[layer] = fan_in;
        sizes[layer + 1] = fan_out;
        let mut params = Vec::with_capacity(parameter_count(&sizes));
        for l in 0..self.num_layers() {
            if l == layer {
                params.extend(weight.iter().copied());
                params.extend(bias.iter().copied());
            } else {
                let (w, b) = self.layer(l);
                params.extend(w.iter().copied());
                params.extend(b.iter().copied());
            }
        }
        Self::from_params(&sizes, self.activation, params)
    }

    fn check_batch(&self, batch: &ArrayView2<T>) -> Result<(), NetError> {
        if batch.ncols() != self.input_dim() {
            return Err(NetError::Shape(format!(
                "batch width {} does not match network input {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Maps every row of `batch` through the network.
    pub fn forward(&self, batch: ArrayView2<T>) -> Result<Array2<T>, NetError> {
        self.check_batch(&batch)?;
        let last = self.num_layers() - 1;
        let mut h = batch.to_owned();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            z += &b.insert_axis(Axis(0));
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_cached(&self, batch: ArrayView2<T>) -> Result<ForwardCache<T>, NetError> {
        self.check_batch(&batch)?;
        let last = self.num_layers() - 1;
        let mut layer_inputs = Vec::with_capacity(self.num_layers() + 1);
        let mut pre_activations = Vec::with_capacity(last);
        layer_inputs.push(batch.to_owned());
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = layer_inputs[l].dot(&w.t());
            z += &b.insert_axis(Axis(0));
            if l < last {
                let act = self.activation;
                let a = z.mapv(|v| act.apply(v));
                if act != Activation::Tanh {
                    pre_activations.push(z);
                }
                layer_inputs.push(a);
            } else {
                layer_inputs.push(z);
            }
        }
        Ok(ForwardCache {
            layer_inputs,
            pre_activations,
        })
    }

    /// Reverse-mode pass from a cached forward.
    ///
    /// Returns the flat parameter gradient (same layout as [`Mlp::params`])
    /// and the gradient with respect to the input batch.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache<T>,
        upstream: ArrayView2<T>,
    ) -> Result<(Vec<T>, Array2<T>), NetError> {
        let mut grads = vec![T::zero(); self.num_params()];
        let input_grad = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward_cached`], but accumulates the parameter gradient
    /// into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        upstream: ArrayView2<T>,
        grads: &mut [T],
    ) -> Result<Array2<T>, NetError> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(NetError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        if cache.layer_inputs.len() != self.num_layers() + 1 {
            return Err(NetError::Shape("cache depth does not match network".into()));
        }
        if grads.len() != self.num_params() {
            return Err(NetError::Shape(format!(
                "gradient buffer has {} entries, network has {}",
                grads.len(),
                self.num_params()
            )));
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let input = &cache.layer_inputs[l];
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (fan_out, fan_in),
                    &mut grads[off..off + fan_in * fan_out],
                )
                .expect("gradient view");
                ndarray::linalg::general_mat_mul(T::one(), &delta.t(), input, T::one(), &mut gw);
            }
            let gb = &mut grads[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            for row in delta.rows() {
                for (g, &d) in gb.iter_mut().zip(row.iter()) {
                    *g += d;
                }
            }
            let (w, _) = self.layer(l);
            let mut prev = delta.dot(&w);
            if l > 0 {
                let act = self.activation;
                let a = &cache.layer_inputs[l];
                match act {
                    Activation::Tanh => {
                        ndarray::Zip::from(&mut prev)
                            .and(a)
                            .for_each(|p, &av| *p *= act.derivative(av, av));
                    }
                    Activation::Softplus => {
                        let z = &cache.pre_activations[l - 1];
                        ndarray::Zip::from(&mut prev)
                            .and(z)
                            .and(a)
                            .for_each(|p, &zv, &av| *p *= act.derivative(zv, av));
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Runs a forward pass on `batch` and back-propagates `upstream`.
    pub fn backward(
        &self,
        batch: ArrayView2<T>,
        upstream: ArrayView2<T>,
    ) -> Result<(Vec<T>, Array2<T>), NetError> {
        let cache = self.forward_cached(batch)?;
        self.backward_cached(&cache, upstream)
    }

    /// Converts the parameters to another precision.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            activation: self.activation,
            params: self.params.iter().map(|&p| U::lit(p.to_f64_lossy())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<T>,
    second: Vec<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first: vec![T::zero(); num_params],
            second: vec![T::zero(); num_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update at the configured learning rate.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<(), NetError> {
        let lr = self.config.learning_rate;
        self.step_with_lr(params, grads, lr)
    }

    /// One bias-corrected Adam update at an explicit learning rate.
    pub fn step_with_lr(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<(), NetError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(NetError::Shape(format!(
                "adam state has {} entries, params {}, grads {}",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let eps = T::lit(self.config.epsilon);
        let t = self.step as i32;
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        let lr = T::lit(lr);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = b1 * self.first[i] + (T::one() - b1) * g;
            self.second[i] = b2 * self.second[i] + (T::one() - b2) * g * g;
            let m_hat = self.first[i] / corr1;
            let v_hat = self.second[i] / corr2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
