//! A small multilayer perceptron with explicit reverse-mode gradients and Adam.
//!
//! Inputs are processed in batches: a batch is an `(rows × in)` matrix and the
//! per-layer affine map is `Z = X W + b` with `W` stored as `(in × out)`.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    /// `ln(1 + e^x)`, a smooth positive map.
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative given the pre-activation and the activation output.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Softplus => 1.0 / (1.0 + (-pre).exp()),
        }
    }

    /// Inverse of the activation, where one exists. Used to place initial outputs.
    pub fn inverse(self, y: f64) -> Option<f64> {
        match self {
            Activation::Tanh if y.abs() < 1.0 => Some(y.atanh()),
            Activation::Identity => Some(y),
            Activation::Softplus if y > 0.0 => Some(if y > 30.0 { y } else { y.exp_m1().ln() }),
            _ => None,
        }
    }
}

/// `tanh` through a single `exp`, several times cheaper than the libm call.
/// Small arguments use the Taylor series to avoid cancellation; relative
/// error stays below 1e-14.
#[inline]
pub fn fast_tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.02 {
        let x2 = x * x;
        return x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0))));
    }
    if a > 20.0 {
        return x.signum();
    }
    let t = 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
    t.copysign(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(fan_in × fan_out)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Feed-forward network: hidden layers use `activation`, the last layer uses
/// `final_activation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    final_activation: Activation,
    version: u64,
}

/// Activations retained by [`Mlp::forward_batch`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    layer_dims: Vec<usize>,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("cache has at least one layer")
    }

    pub fn rows(&self) -> usize {
        self.input.nrows()
    }

    /// Cache restricted to rows `start..end`, valid for the same network version.
    pub fn slice_rows(&self, start: usize, end: usize) -> ForwardCache {
        let rows = |m: &Array2<f64>| m.slice(ndarray::s![start..end, ..]).to_owned();
        ForwardCache {
            version: self.version,
            layer_dims: self.layer_dims.clone(),
            input: rows(&self.input),
            pre: self.pre.iter().map(rows).collect(),
            post: self.post.iter().map(rows).collect(),
        }
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|&v| v == 0.0))
    }
}

impl Mlp {
    /// Random initialization: Glorot-uniform for tanh/identity/softplus layers,
    /// He-uniform for relu layers, zero biases.
    pub fn new(
        layer_dims: &[usize],
        activation: Activation,
        final_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer dims {layer_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (layer_dims[i], layer_dims[i + 1]);
                let act = if i + 1 == n_layers { final_activation } else { activation };
                let limit = match act {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                Layer {
                    weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            activation,
            final_activation,
            version: 0,
        })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(layer_dims: &[usize], activation: Activation, final_activation: Activation) -> Result<Self> {
        let mut net = Self::new(layer_dims, activation, final_activation, 0)?;
        for l in &mut net.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn final_activation(&self) -> Activation {
        self.final_activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Bumps the parameter version, so caches
    /// taken before the call are rejected by [`Mlp::backward_batch`].
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        self.version += 1;
        Ok(())
    }

    fn act_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.final_activation
        } else {
            self.activation
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let (out, cache) = self.forward_batch(&x)?;
        Ok((out.row(0).to_vec(), cache))
    }

    /// Batched forward pass retaining activations.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(input.ncols())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &post[i - 1] };
            let z = x.dot(&layer.weight) + &layer.bias;
            let act = self.act_for(i);
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            post.push(a);
        }
        let out = post.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                version: self.version,
                layer_dims: self.layer_dims.clone(),
                input: input.clone(),
                pre,
                post,
            },
        ))
    }

    /// Batched forward pass without a cache.
    pub fn predict_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut x: Option<Array2<f64>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = match &x {
                None => input.dot(&layer.weight),
                Some(prev) => prev.dot(&layer.weight),
            } + &layer.bias;
            let act = self.act_for(i);
            x = Some(z.mapv_into(|v| act.apply(v)));
        }
        Ok(x.unwrap())
    }

    /// Reverse pass for a single-input cache.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let (grads, dx) = self.backward_batch(cache, &g)?;
        Ok((grads, dx.row(0).to_vec()))
    }

    /// Reverse pass: parameter gradients summed over rows, and per-row input gradients.
    pub fn backward_batch(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        self.backward_impl(cache, output_grad, true)
            .map(|(g, dx)| (g.expect("parameter gradients requested"), dx))
    }

    /// Reverse pass that only propagates to the inputs.
    pub fn input_grad_batch(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<Array2<f64>> {
        self.backward_impl(cache, output_grad, false).map(|(_, dx)| dx)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &Array2<f64>,
        want_params: bool,
    ) -> Result<(Option<MlpGrads>, Array2<f64>)> {
        if cache.version != self.version || cache.layer_dims != self.layer_dims {
            return Err(Error::TapeMismatch(format!(
                "cache from parameter version {} / dims {:?}, network at version {} / dims {:?}",
                cache.version, cache.layer_dims, self.version, self.layer_dims
            )));
        }
        if output_grad.dim() != cache.output().dim() {
            return Err(Error::TapeMismatch(format!(
                "output gradient shape {:?} does not match cached output {:?}",
                output_grad.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = want_params.then(|| MlpGrads::zeros_like(self));
        let mut delta = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let act = self.act_for(i);
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .and(&cache.post[i])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
            let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            if let Some(g) = grads.as_mut() {
                g.layers[i].weight = x.t().dot(&delta);
                g.layers[i].bias = delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.layers[i].weight.t());
        }
        Ok((grads, delta))
    }

    pub fn to_state(&self) -> MlpState {
        MlpState {
            layer_dims: self.layer_dims.clone(),
            activation: self.activation,
            final_activation: self.final_activation,
            params: self.params_flat(),
        }
    }

    pub fn from_state(state: &MlpState) -> Result<Self> {
        let mut net = Self::zeros(&state.layer_dims, state.activation, state.final_activation)?;
        net.set_params_flat(&state.params)?;
        net.version = 0;
        Ok(net)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Serializable network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpState {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub final_activation: Activation,
    pub params: Vec<f64>,
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Updates rejected because of non-finite gradients.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon: 1e-8,
            skipped: 0,
        }
    }

    /// Bias-corrected Adam update of `params` in place. Returns `false` (and
    /// leaves everything but the skip counter untouched) if any gradient is
    /// not finite.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!(
                "adam: skipped update {} with non-finite gradient",
                self.step_count + self.skipped
            );
            return Ok(false);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(true)
    }
}

/// One Adam update of a network. Returns whether the update was applied.
pub fn adam_step(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<bool> {
    let mut params = net.params_flat();
    let applied = state.update(&mut params, &grads.to_flat())?;
    if applied {
        net.set_params_flat(&params)?;
    }
    Ok(applied)
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-8;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Scalar loss of a network output batch and its gradient.
pub type LossFn = dyn Fn(&Array2<f64>) -> (f64, Array2<f64>);

/// Compares backpropagated parameter gradients with central differences on
/// `probe_count` randomly chosen parameters and returns the largest relative
/// error. `loss` maps the network output batch to a scalar and its gradient.
///
/// Probes whose perturbation flips a relu gate are resampled.
pub fn grad_check(
    net: &Mlp,
    input: &Array2<f64>,
    loss: &LossFn,
    probe_count: usize,
    seed: u64,
    step: f64,
) -> Result<f64> {
    let (out, cache) = net.forward_batch(input)?;
    let (_, out_grad) = loss(&out);
    let (grads, _) = net.backward_batch(&cache, &out_grad)?;
    let analytic = grads.to_flat();
    let base = net.params_flat();
    let base_mask = relu_mask(net, &cache);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < probe_count {
        attempts += 1;
        if attempts > 50 * probe_count.max(1) {
            return Err(Error::NumericalAbort("grad_check could not find kink-free probes".into()));
        }
        let idx = rng.random_range(0..base.len());
        let mut eval = |delta: f64| -> Result<(f64, Option<Vec<bool>>)> {
            let mut p = base.clone();
            p[idx] += delta;
            probe.set_params_flat(&p)?;
            let (o, c) = probe.forward_batch(input)?;
            Ok((loss(&o).0, relu_mask(&probe, &c)))
        };
        let (up, mask_up) = eval(step)?;
        let (down, mask_down) = eval(-step)?;
        if mask_up != base_mask || mask_down != base_mask {
            continue;
        }
        let fd = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic[idx], fd));
        done += 1;
    }
    Ok(worst)
}

fn relu_mask(net: &Mlp, cache: &ForwardCache) -> Option<Vec<bool>> {
    let any_relu = (0..net.layers.len()).any(|i| net.act_for(i) == Activation::Relu);
    any_relu.then(|| {
        cache
            .pre
            .iter()
            .enumerate()
            .filter(|(i, _)| net.act_for(*i) == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    })
}
