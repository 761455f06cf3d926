//! Dense networks with hand-written reverse mode, including the second-order
//! pass needed to differentiate an input-gradient penalty.
//!
//! Layout: row-major batches (`batch x features`), weights stored `n_in x n_out`
//! so a layer is `z = h W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn second_derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu if z <= 0.0 => z.exp(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    weight: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

/// Multi-layer perceptron. The last layer normally uses [`Activation::Identity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "NetSnapshot", try_from = "NetSnapshot")]
pub struct MlpNet {
    layers: Vec<Layer>,
    generation: u64,
}

/// Nets are equal when their layers are; the cache generation is ignored.
impl PartialEq for MlpNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetSnapshot {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl From<MlpNet> for NetSnapshot {
    fn from(net: MlpNet) -> Self {
        NetSnapshot {
            layer_sizes: net.layer_sizes(),
            activations: net.layers.iter().map(|l| l.activation).collect(),
            params: net.flat_params(),
        }
    }
}

impl TryFrom<NetSnapshot> for MlpNet {
    type Error = Error;

    fn try_from(s: NetSnapshot) -> Result<Self> {
        let mut net = MlpNet::zeros(&s.layer_sizes, &s.activations)?;
        net.set_flat_params(&s.params)?;
        net.generation = 0;
        Ok(net)
    }
}

/// Activations kept by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// `inputs[l]` is the input of layer `l` (the batch itself for `l = 0`).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Intermediate values of the input-gradient pass.
#[derive(Debug, Clone)]
pub struct TangentCache {
    generation: u64,
    out_weights: Array2<f64>,
    /// `deltas[l]` = d(out)/d(pre-activation of layer l).
    deltas: Vec<Array2<f64>>,
    /// `us[l]` = d(out)/d(input of layer l); `us[0]` is the input gradient.
    us: Vec<Array2<f64>>,
}

impl TangentCache {
    pub fn input_gradient(&self) -> &Array2<f64> {
        &self.us[0]
    }
}

/// Parameter gradients, summed over the batch, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

impl ParamGrads {
    pub fn zeros_like(net: &MlpNet, batch: usize) -> Self {
        ParamGrads {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
            input: Array2::zeros((batch, net.input_dim())),
        }
    }

    /// Same ordering as [`MlpNet::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(scale, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
        self.input *= s;
    }
}

impl MlpNet {
    /// All-zero network. `activations[l]` applies after layer `l`.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layers need {} activations, got {}",
                layer_sizes.len() - 1,
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
                activation,
            })
            .collect();
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    /// Orthogonally initialized network with `hidden` activation on all but
    /// the last layer. Hidden layers use gain sqrt(2); biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        let mut net = Self::zeros(layer_sizes, &acts)?;
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let gain = if i == last {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            layer.weight = orthogonal(layer.weight.nrows(), layer.weight.ncols(), gain, rng);
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim()];
        v.extend(self.layers.iter().map(|l| l.bias.len()));
        v
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Sum over layers of `(n_in + 1) * n_out`.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer].weight
    }

    pub fn bias(&self, layer: usize) -> &Array1<f64> {
        &self.layers[layer].bias
    }

    pub fn set_weight(&mut self, layer: usize, w: Array2<f64>) -> Result<()> {
        if w.raw_dim() != self.layers[layer].weight.raw_dim() {
            return Err(Error::Shape("weight shape mismatch".into()));
        }
        self.layers[layer].weight = w;
        self.generation += 1;
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, b: Array1<f64>) -> Result<()> {
        if b.len() != self.layers[layer].bias.len() {
            return Err(Error::Shape("bias shape mismatch".into()));
        }
        self.layers[layer].bias = b;
        self.generation += 1;
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = params[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[k];
                k += 1;
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Batched forward pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = h.dot(&layer.weight) + &layer.bias;
            let act = layer.activation;
            let next = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            pre,
            output: h,
        })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let cache = self.forward_batch(x)?;
        Ok((cache.output.row(0).to_vec(), cache))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch(x)?.output)
    }

    fn check_cache(&self, generation: u64, batch: usize, rows: usize) -> Result<()> {
        if generation != self.generation {
            return Err(Error::InvalidArgument(
                "stale cache: parameters changed since the forward pass".into(),
            ));
        }
        if batch != rows {
            return Err(Error::Shape(format!(
                "gradient batch {rows} does not match cache batch {batch}"
            )));
        }
        Ok(())
    }

    /// Reverse pass: gradients of `sum(output * output_grad)`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<ParamGrads> {
        self.check_cache(cache.generation, cache.batch_size(), output_grad.nrows())?;
        if output_grad.ncols() != self.output_dim() {
            return Err(Error::Shape("output gradient width mismatch".into()));
        }
        let n = self.layers.len();
        let zero_seeds: Vec<Option<Array2<f64>>> = vec![None; n];
        self.reverse(cache, Some(output_grad), &zero_seeds)
    }

    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<ParamGrads> {
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad)
            .map_err(|e| Error::Shape(e.to_string()))?;
        self.backward_batch(cache, g)
    }

    /// Shared reverse sweep. `seeds[l]` adds a direct gradient on the
    /// pre-activation of layer `l`.
    fn reverse(
        &self,
        cache: &ForwardCache,
        output_grad: Option<ArrayView2<f64>>,
        seeds: &[Option<Array2<f64>>],
    ) -> Result<ParamGrads> {
        let n = self.layers.len();
        let batch = cache.batch_size();
        let mut grads = ParamGrads::zeros_like(self, batch);
        // gradient w.r.t. the output of the current layer
        let mut h_bar: Option<Array2<f64>> = output_grad.map(|g| g.to_owned());
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let act = layer.activation;
            let z = &cache.pre[l];
            let mut z_bar = match h_bar.take() {
                Some(hb) => {
                    let mut zb = hb;
                    zb.zip_mut_with(z, |g, &zv| *g *= act.derivative(zv));
                    zb
                }
                None => Array2::zeros(z.raw_dim()),
            };
            if let Some(seed) = &seeds[l] {
                z_bar += seed;
            }
            grads.weights[l] = cache.inputs[l].t().dot(&z_bar);
            grads.biases[l] = z_bar.sum_axis(Axis(0));
            h_bar = Some(z_bar.dot(&layer.weight.t()));
        }
        grads.input = h_bar.unwrap_or_else(|| Array2::zeros((batch, self.input_dim())));
        Ok(grads)
    }

    /// Gradient of `sum_k out_weights[b, k] * output[b, k]` with respect to
    /// each input row `b`.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache,
        out_weights: ArrayView2<f64>,
    ) -> Result<TangentCache> {
        self.check_cache(cache.generation, cache.batch_size(), out_weights.nrows())?;
        let n = self.layers.len();
        let mut deltas = vec![Array2::zeros((0, 0)); n];
        let mut us = vec![Array2::zeros((0, 0)); n];
        let mut upstream = out_weights.to_owned();
        for l in (0..n).rev() {
            let act = self.layers[l].activation;
            let mut d = upstream.clone();
            d.zip_mut_with(&cache.pre[l], |g, &zv| *g *= act.derivative(zv));
            let u = d.dot(&self.layers[l].weight.t());
            deltas[l] = d;
            upstream = u.clone();
            us[l] = u;
        }
        Ok(TangentCache {
            generation: cache.generation,
            out_weights: out_weights.to_owned(),
            deltas,
            us,
        })
    }

    /// Parameter gradients of `sum_b <g_bar[b], input_gradient[b]>`.
    ///
    /// Reverse mode over the input-gradient pass itself. For layer `l` with
    /// `delta_l = upstream_l * s'(z_l)` and `u_{l-1} = delta_l W_l^T`:
    ///
    /// ```text
    /// dW_l      += u_bar_{l-1}^T delta_l
    /// delta_bar  = u_bar_{l-1} W_l
    /// z_bar_l    = delta_bar * upstream_l * s''(z_l)   (zero for ReLU / identity)
    /// u_bar_l    = delta_bar * s'(z_l)
    /// ```
    ///
    /// The `z_bar_l` terms are then pushed back through the forward pass,
    /// which is where the first-layer-onward weight cross terms come from.
    pub fn input_gradient_backward(
        &self,
        cache: &ForwardCache,
        tangent: &TangentCache,
        g_bar: ArrayView2<f64>,
    ) -> Result<ParamGrads> {
        self.check_cache(cache.generation, cache.batch_size(), g_bar.nrows())?;
        if tangent.generation != self.generation {
            return Err(Error::InvalidArgument("stale tangent cache".into()));
        }
        let n = self.layers.len();
        let mut direct_w: Vec<Array2<f64>> = Vec::with_capacity(n);
        let mut seeds: Vec<Option<Array2<f64>>> = vec![None; n];
        let mut u_bar = g_bar.to_owned();
        for l in 0..n {
            let layer = &self.layers[l];
            let act = layer.activation;
            direct_w.push(u_bar.t().dot(&tangent.deltas[l]));
            let delta_bar = u_bar.dot(&layer.weight);
            let upstream = if l + 1 < n {
                &tangent.us[l + 1]
            } else {
                &tangent.out_weights
            };
            if act == Activation::Elu {
                let mut zb = delta_bar.clone();
                ndarray::Zip::from(&mut zb)
                    .and(upstream)
                    .and(&cache.pre[l])
                    .for_each(|g, &up, &zv| *g *= up * act.second_derivative(zv));
                seeds[l] = Some(zb);
            }
            let mut next = delta_bar;
            next.zip_mut_with(&cache.pre[l], |g, &zv| *g *= act.derivative(zv));
            u_bar = next;
        }
        let mut grads = if seeds.iter().any(Option::is_some) {
            self.reverse(cache, None, &seeds)?
        } else {
            ParamGrads::zeros_like(self, cache.batch_size())
        };
        for (g, d) in grads.weights.iter_mut().zip(direct_w) {
            *g += &d;
        }
        Ok(grads)
    }
}

/// Random matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    // Gram-Schmidt on the longer dimension's transpose
    let (n, m) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q = Array2::<f64>::zeros((m, n));
    for i in 0..m {
        loop {
            let mut v: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for j in 0..i {
                let qj = q.row(j);
                let proj = v.dot(&qj);
                v.scaled_add(-proj, &qj);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                q.row_mut(i).assign(&(v / norm));
                break;
            }
        }
    }
    let q = if rows >= cols { q.reversed_axes() } else { q };
    // fresh row-major strides, identical to a deserialized net's, so both
    // take the same matmul path
    let data: Vec<f64> = q.iter().map(|v| v * gain).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Momentum buffer coefficient for SGD and RMSProp.
    pub momentum: f64,
    /// RMSProp squared-gradient smoothing constant.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            weight_decay: 0.0,
            momentum: 0.0,
            alpha: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            ..Self::sgd(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(learning_rate)
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_momentum(mut self, m: f64) -> Self {
        self.momentum = m;
        self
    }
}

/// Optimizer configuration plus per-parameter accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Self {
            config,
            step: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }

    pub fn num_params(&self) -> usize {
        self.first.len()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// In-place update. Weight decay is added to the gradient as an L2 term.
    /// Non-finite gradients leave `params` and the accumulators untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} accumulators, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i}; optimizer step rejected"
            )));
        }
        let c = self.config;
        self.step += 1;
        let t = self.step as f64;
        for i in 0..params.len() {
            let g = grads[i] + c.weight_decay * params[i];
            match c.kind {
                OptimizerKind::Sgd => {
                    let d = if c.momentum > 0.0 {
                        self.first[i] = if self.step == 1 {
                            g
                        } else {
                            c.momentum * self.first[i] + g
                        };
                        self.first[i]
                    } else {
                        g
                    };
                    params[i] -= c.learning_rate * d;
                }
                OptimizerKind::Rmsprop => {
                    self.second[i] = c.alpha * self.second[i] + (1.0 - c.alpha) * g * g;
                    let scaled = g / (self.second[i].sqrt() + c.eps);
                    let d = if c.momentum > 0.0 {
                        self.first[i] = c.momentum * self.first[i] + scaled;
                        self.first[i]
                    } else {
                        scaled
                    };
                    params[i] -= c.learning_rate * d;
                }
                OptimizerKind::Adam => {
                    self.first[i] = c.beta1 * self.first[i] + (1.0 - c.beta1) * g;
                    self.second[i] = c.beta2 * self.second[i] + (1.0 - c.beta2) * g * g;
                    let m_hat = self.first[i] / (1.0 - c.beta1.powf(t));
                    let v_hat = self.second[i] / (1.0 - c.beta2.powf(t));
                    params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
                }
            }
        }
        Ok(())
    }

    /// Convenience: update every parameter of `net` with `grads`.
    pub fn step_net(&mut self, net: &mut MlpNet, grads: &ParamGrads) -> Result<()> {
        let mut p = net.flat_params();
        self.step(&mut p, &grads.flat())?;
        net.set_flat_params(&p)
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
