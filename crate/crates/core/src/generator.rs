//! Neural SDE generator.
//!
//! A latent draw `v ~ N(0, I)` is mapped to an initial state `y_0 = h(v, c)`, then
//! `dy = f(τ, y) dτ + g(τ, y) ∘ dW_τ` is unrolled on the time grid, where `τ`
//! is grid time rescaled to `[0, 1]` and `W_τ` is a Brownian motion in that
//! clock. The networks work in standardized units; emitted paths are
//! `x = loc + scale · y`.
//!
//! The optional context `c` summarizes the conditioning window of a reference
//! path (first, last, mean and standard deviation of its first `cond_len`
//! values, standardized); without it generation is unconditional.
//!
//! Gradients are taken through the discretized solver with the Brownian
//! increments frozen (discretize-then-optimize).

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ForwardCache, Mlp, MlpGrads, MlpState};
use crate::rng::{self, stream};
use crate::sde::{PathBatch, Scheme, TimeGrid};

/// Number of conditioning-window statistics fed to `h`.
pub const CONTEXT_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    /// Hidden width of the drift, diffusion and initial-state networks.
    pub hidden: usize,
    /// Number of hidden layers in each network.
    pub depth: usize,
    pub scheme: Scheme,
    /// Feed conditioning-window statistics into the initial-state network.
    pub condition: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: 32,
            depth: 2,
            scheme: Scheme::StratHeun,
            condition: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSdeGenerator {
    pub h_net: Mlp,
    pub f_net: Mlp,
    pub g_net: Mlp,
    pub latent_dim: usize,
    /// Length of the conditioning window when generation is conditional.
    pub cond_len: Option<usize>,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    /// Output map `x = loc + scale · y`.
    pub loc: f64,
    pub scale: f64,
}

/// Per-network parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrads {
    pub h: MlpGrads,
    pub f: MlpGrads,
    pub g: MlpGrads,
}

impl GeneratorGrads {
    pub fn is_zero(&self) -> bool {
        self.h.is_zero() && self.f.is_zero() && self.g.is_zero()
    }

    pub fn is_finite(&self) -> bool {
        self.h.is_finite() && self.f.is_finite() && self.g.is_finite()
    }

    pub fn scale(&mut self, k: f64) {
        self.h.scale(k);
        self.f.scale(k);
        self.g.scale(k);
    }
}

struct NetEval {
    cache: ForwardCache,
}

struct StepTape {
    dw: Vec<f64>,
    f0: NetEval,
    g0: NetEval,
    /// Corrector-stage evaluations (Heun only).
    f1: Option<NetEval>,
    g1: Option<NetEval>,
}

/// Everything needed to replay a sampled batch in reverse.
pub struct GeneratorTape {
    seed: u64,
    batch: usize,
    h_cache: ForwardCache,
    steps: Vec<StepTape>,
}

impl GeneratorTape {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Brownian increments used at grid step `k`, one per path.
    pub fn increments(&self, k: usize) -> &[f64] {
        &self.steps[k].dw
    }
}

fn state_input(tau: f64, y: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((y.len(), 2));
    for (i, &v) in y.iter().enumerate() {
        m[[i, 0]] = tau;
        m[[i, 1]] = v;
    }
    m
}

impl NeuralSdeGenerator {
    pub fn new(config: &GeneratorConfig, grid: TimeGrid, seed: u64) -> Result<Self> {
        if config.latent_dim == 0 || config.hidden == 0 {
            return Err(Error::invalid("latent_dim and hidden must be positive"));
        }
        let dims = |input: usize| {
            let mut d = vec![input];
            d.extend(std::iter::repeat_n(config.hidden, config.depth));
            d.push(1);
            d
        };
        let cond_len = config.condition.then(|| crate::dataset::default_target_from(grid.points()));
        let h_in = config.latent_dim + if config.condition { CONTEXT_FEATURES } else { 0 };
        let h_net = Mlp::new(&dims(h_in), Activation::Tanh, Activation::Identity, rng::derive_seed(seed, 11, 0))?;
        let f_net = Mlp::new(&dims(2), Activation::Tanh, Activation::Identity, rng::derive_seed(seed, 11, 1))?;
        let g_net = Mlp::new(&dims(2), Activation::Tanh, Activation::Softplus, rng::derive_seed(seed, 11, 2))?;
        Self::from_parts(h_net, f_net, g_net, grid, config.scheme, cond_len, 0.0, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        h_net: Mlp,
        f_net: Mlp,
        g_net: Mlp,
        grid: TimeGrid,
        scheme: Scheme,
        cond_len: Option<usize>,
        loc: f64,
        scale: f64,
    ) -> Result<Self> {
        for (name, net) in [("f_net", &f_net), ("g_net", &g_net)] {
            if net.input_dim() != 2 || net.output_dim() != 1 {
                return Err(Error::invalid(format!(
                    "{name} must map (time, state) to a scalar, has dims {:?}",
                    net.layer_dims()
                )));
            }
        }
        let context = if cond_len.is_some() { CONTEXT_FEATURES } else { 0 };
        if h_net.output_dim() != 1 || h_net.input_dim() <= context {
            return Err(Error::invalid(format!(
                "h_net dims {:?} cannot map latent noise and {context} context features to a scalar",
                h_net.layer_dims()
            )));
        }
        if let Some(c) = cond_len {
            if c == 0 || c > grid.points() {
                return Err(Error::invalid(format!("conditioning window {c} does not fit the grid")));
            }
        }
        if !(scale > 0.0) || !loc.is_finite() {
            return Err(Error::invalid("output map needs finite loc and positive scale"));
        }
        Ok(Self {
            latent_dim: h_net.input_dim() - context,
            cond_len,
            h_net,
            f_net,
            g_net,
            grid,
            scheme,
            loc,
            scale,
        })
    }

    /// Fit the output map and initial output levels to a training set: `loc`
    /// and `scale` become the global mean and standard deviation, `h` starts at
    /// the mean initial state, `g` at the typical increment size and the last
    /// layers of `h` and `f` are shrunk so the untrained model starts close to
    /// a constant-level random walk.
    pub fn calibrate(&mut self, train: &PathBatch) -> Result<()> {
        if train.grid != self.grid {
            return Err(Error::invalid("training grid differs from generator grid"));
        }
        let (mean, sd) = train.global_moments();
        self.loc = mean;
        self.scale = if sd > 0.0 { sd } else { 1.0 };
        let x0 = train.column(0);
        let y0 = (x0.iter().sum::<f64>() / x0.len() as f64 - self.loc) / self.scale;
        let steps = self.grid.steps;
        let mut incr_sq = 0.0;
        for row in train.values.rows() {
            for k in 0..steps {
                incr_sq += (row[k + 1] - row[k]).powi(2);
            }
        }
        let incr_sd = (incr_sq / (train.len() * steps) as f64).sqrt() / self.scale / self.step_size().sqrt();
        let target_g = incr_sd.clamp(1e-3, 10.0);

        let h_layers = self.h_net.layers_mut();
        let last = h_layers.len() - 1;
        h_layers[last].weight *= 0.1;
        h_layers[last].bias.fill(y0);
        let f_layers = self.f_net.layers_mut();
        let last = f_layers.len() - 1;
        f_layers[last].weight *= 0.1;
        f_layers[last].bias.fill(0.0);
        let g_bias = Activation::Softplus.inverse(target_g).unwrap_or(0.0);
        let g_layers = self.g_net.layers_mut();
        let last = g_layers.len() - 1;
        g_layers[last].weight *= 0.1;
        g_layers[last].bias.fill(g_bias);
        Ok(())
    }

    /// Input to `h`: latent noise followed by the context features of the
    /// first `batch` rows of `context`.
    fn h_input(&self, batch: usize, seed: u64, context: Option<&PathBatch>) -> Result<Array2<f64>> {
        let extra = if self.cond_len.is_some() { CONTEXT_FEATURES } else { 0 };
        let mut input = Array2::zeros((batch, self.latent_dim + extra));
        for i in 0..batch {
            for j in 0..self.latent_dim {
                input[[i, j]] = rng::normal(seed, stream::LATENT, i as u64, j as u64);
            }
        }
        match (self.cond_len, context) {
            (None, _) => {}
            (Some(_), None) => return Err(Error::invalid("conditional generator needs context paths")),
            (Some(len), Some(ctx)) => {
                if ctx.len() < batch || ctx.grid != self.grid {
                    return Err(Error::invalid(format!(
                        "context must hold at least {batch} paths on the generator grid, got {}",
                        ctx.len()
                    )));
                }
                for i in 0..batch {
                    let feats = self.context_features(&ctx.path(i)[..len]);
                    for (j, f) in feats.into_iter().enumerate() {
                        input[[i, self.latent_dim + j]] = f;
                    }
                }
            }
        }
        Ok(input)
    }

    /// Solver step in the normalized clock.
    pub fn step_size(&self) -> f64 {
        1.0 / self.grid.steps as f64
    }

    fn context_features(&self, window: &[f64]) -> [f64; CONTEXT_FEATURES] {
        let n = window.len() as f64;
        let mean = window.iter().sum::<f64>() / n;
        let sd = (window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let s = |x: f64| (x - self.loc) / self.scale;
        [s(window[0]), s(window[window.len() - 1]), s(mean), sd / self.scale]
    }

    fn increments(&self, batch: usize, seed: u64, k: usize) -> Vec<f64> {
        let sqrt_dt = self.step_size().sqrt();
        (0..batch)
            .map(|i| sqrt_dt * rng::normal(seed, stream::BROWNIAN, i as u64, k as u64))
            .collect()
    }

    fn to_paths(&self, y: &Array2<f64>, seed: u64) -> Result<PathBatch> {
        let values = y.mapv(|v| self.loc + self.scale * v);
        if let Some(((path, step), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { path, step });
        }
        PathBatch::new(self.grid, values, seed)
    }

    fn check_column(col: &[f64], step: usize) -> Result<()> {
        match col.iter().position(|v| !v.is_finite()) {
            Some(path) => Err(Error::NonFinite { path, step }),
            None => Ok(()),
        }
    }

    /// Sample paths without recording a tape.
    pub fn sample(&self, batch: usize, seed: u64, context: Option<&PathBatch>) -> Result<PathBatch> {
        if batch == 0 {
            return Err(Error::invalid("batch must contain at least one path"));
        }
        let dt = self.step_size();
        let mut y = Array2::zeros((batch, self.grid.points()));
        let y0 = self.h_net.predict_batch(&self.h_input(batch, seed, context)?)?;
        y.column_mut(0).assign(&y0.column(0));
        Self::check_column(&y.column(0).to_vec(), 0)?;
        let mut cur: Vec<f64> = y.column(0).to_vec();
        for k in 0..self.grid.steps {
            let dw = self.increments(batch, seed, k);
            let tau = self.grid.normalized_time(k);
            let inp = state_input(tau, &cur);
            let f0 = self.f_net.predict_batch(&inp)?;
            let g0 = self.g_net.predict_batch(&inp)?;
            let pred: Vec<f64> = (0..batch).map(|i| cur[i] + f0[[i, 0]] * dt + g0[[i, 0]] * dw[i]).collect();
            let next: Vec<f64> = match self.scheme {
                Scheme::EulerMaruyama => pred,
                Scheme::StratHeun => {
                    let inp1 = state_input(self.grid.normalized_time(k + 1), &pred);
                    let f1 = self.f_net.predict_batch(&inp1)?;
                    let g1 = self.g_net.predict_batch(&inp1)?;
                    (0..batch)
                        .map(|i| cur[i] + 0.5 * (f0[[i, 0]] + f1[[i, 0]]) * dt + 0.5 * (g0[[i, 0]] + g1[[i, 0]]) * dw[i])
                        .collect()
                }
            };
            Self::check_column(&next, k + 1)?;
            y.column_mut(k + 1).assign(&ndarray::ArrayView1::from(&next));
            cur = next;
        }
        self.to_paths(&y, seed)
    }

    /// Sample paths and record the tape for [`NeuralSdeGenerator::backprop_paths`].
    pub fn sample_paths(&self, batch: usize, seed: u64, context: Option<&PathBatch>) -> Result<(PathBatch, GeneratorTape)> {
        if batch == 0 {
            return Err(Error::invalid("batch must contain at least one path"));
        }
        let dt = self.step_size();
        let mut y = Array2::zeros((batch, self.grid.points()));
        let (y0, h_cache) = self.h_net.forward_batch(&self.h_input(batch, seed, context)?)?;
        let mut cur: Vec<f64> = y0.column(0).to_vec();
        Self::check_column(&cur, 0)?;
        y.column_mut(0).assign(&y0.column(0));
        let mut steps = Vec::with_capacity(self.grid.steps);
        for k in 0..self.grid.steps {
            let dw = self.increments(batch, seed, k);
            let tau = self.grid.normalized_time(k);
            let inp = state_input(tau, &cur);
            let (f0, f0c) = self.f_net.forward_batch(&inp)?;
            let (g0, g0c) = self.g_net.forward_batch(&inp)?;
            let pred: Vec<f64> = (0..batch).map(|i| cur[i] + f0[[i, 0]] * dt + g0[[i, 0]] * dw[i]).collect();
            let (next, f1, g1) = match self.scheme {
                Scheme::EulerMaruyama => (pred, None, None),
                Scheme::StratHeun => {
                    let inp1 = state_input(self.grid.normalized_time(k + 1), &pred);
                    let (f1, f1c) = self.f_net.forward_batch(&inp1)?;
                    let (g1, g1c) = self.g_net.forward_batch(&inp1)?;
                    let next = (0..batch)
                        .map(|i| cur[i] + 0.5 * (f0[[i, 0]] + f1[[i, 0]]) * dt + 0.5 * (g0[[i, 0]] + g1[[i, 0]]) * dw[i])
                        .collect();
                    (next, Some(NetEval { cache: f1c }), Some(NetEval { cache: g1c }))
                }
            };
            Self::check_column(&next, k + 1)?;
            y.column_mut(k + 1).assign(&ndarray::ArrayView1::from(&next));
            cur = next;
            steps.push(StepTape {
                dw,
                f0: NetEval { cache: f0c },
                g0: NetEval { cache: g0c },
                f1,
                g1,
            });
        }
        let paths = self.to_paths(&y, seed)?;
        Ok((
            paths,
            GeneratorTape {
                seed,
                batch,
                h_cache,
                steps,
            },
        ))
    }

    /// Reverse-mode gradient of `Σ_{i,k} path_grads[i,k] · x_{i,k}` with respect
    /// to the parameters of `h`, `f` and `g`, holding the recorded noise fixed.
    pub fn backprop_paths(&self, tape: &GeneratorTape, path_grads: &Array2<f64>) -> Result<GeneratorGrads> {
        if path_grads.dim() != (tape.batch, self.grid.points()) || tape.steps.len() != self.grid.steps {
            return Err(Error::TapeMismatch(format!(
                "path gradient shape {:?} does not match tape ({} paths, {} steps)",
                path_grads.dim(),
                tape.batch,
                tape.steps.len()
            )));
        }
        let dt = self.step_size();
        let batch = tape.batch;
        let mut gf = MlpGrads::zeros_like(&self.f_net);
        let mut gg = MlpGrads::zeros_like(&self.g_net);
        // adjoint of y_{k+1}
        let mut adj: Vec<f64> = path_grads.column(self.grid.steps).iter().map(|g| g * self.scale).collect();
        let col = |m: &Array2<f64>| -> Vec<f64> { m.column(1).to_vec() };
        for k in (0..self.grid.steps).rev() {
            let st = &tape.steps[k];
            let mut prev: Vec<f64> = path_grads.column(k).iter().map(|g| g * self.scale).collect();
            for i in 0..batch {
                prev[i] += adj[i];
            }
            match (&st.f1, &st.g1) {
                (None, None) => {
                    let of = Array2::from_shape_fn((batch, 1), |(i, _)| adj[i] * dt);
                    let og = Array2::from_shape_fn((batch, 1), |(i, _)| adj[i] * st.dw[i]);
                    let (df, dxf) = self.f_net.backward_batch(&st.f0.cache, &of)?;
                    let (dg, dxg) = self.g_net.backward_batch(&st.g0.cache, &og)?;
                    gf.add_assign(&df);
                    gg.add_assign(&dg);
                    let (a, b) = (col(&dxf), col(&dxg));
                    for i in 0..batch {
                        prev[i] += a[i] + b[i];
                    }
                }
                (Some(f1), Some(g1)) => {
                    let of1 = Array2::from_shape_fn((batch, 1), |(i, _)| 0.5 * adj[i] * dt);
                    let og1 = Array2::from_shape_fn((batch, 1), |(i, _)| 0.5 * adj[i] * st.dw[i]);
                    let (df1, dxf1) = self.f_net.backward_batch(&f1.cache, &of1)?;
                    let (dg1, dxg1) = self.g_net.backward_batch(&g1.cache, &og1)?;
                    gf.add_assign(&df1);
                    gg.add_assign(&dg1);
                    let (a, b) = (col(&dxf1), col(&dxg1));
                    let pred_adj: Vec<f64> = (0..batch).map(|i| a[i] + b[i]).collect();
                    let of0 = Array2::from_shape_fn((batch, 1), |(i, _)| 0.5 * adj[i] * dt + pred_adj[i] * dt);
                    let og0 = Array2::from_shape_fn((batch, 1), |(i, _)| {
                        0.5 * adj[i] * st.dw[i] + pred_adj[i] * st.dw[i]
                    });
                    let (df0, dxf0) = self.f_net.backward_batch(&st.f0.cache, &of0)?;
                    let (dg0, dxg0) = self.g_net.backward_batch(&st.g0.cache, &og0)?;
                    gf.add_assign(&df0);
                    gg.add_assign(&dg0);
                    let (c, d) = (col(&dxf0), col(&dxg0));
                    for i in 0..batch {
                        prev[i] += pred_adj[i] + c[i] + d[i];
                    }
                }
                _ => return Err(Error::TapeMismatch("incomplete Heun stage on tape".into())),
            }
            adj = prev;
        }
        let oh = Array2::from_shape_fn((batch, 1), |(i, _)| adj[i]);
        let (gh, _) = self.h_net.backward_batch(&tape.h_cache, &oh)?;
        Ok(GeneratorGrads { h: gh, f: gf, g: gg })
    }

    pub fn to_state(&self) -> GeneratorState {
        GeneratorState {
            h_net: self.h_net.to_state(),
            f_net: self.f_net.to_state(),
            g_net: self.g_net.to_state(),
            grid: self.grid,
            scheme: self.scheme,
            cond_len: self.cond_len,
            loc: self.loc,
            scale: self.scale,
        }
    }

    pub fn from_state(state: &GeneratorState) -> Result<Self> {
        Self::from_parts(
            Mlp::from_state(&state.h_net)?,
            Mlp::from_state(&state.f_net)?,
            Mlp::from_state(&state.g_net)?,
            state.grid,
            state.scheme,
            state.cond_len,
            state.loc,
            state.scale,
        )
    }

    pub fn param_count(&self) -> usize {
        self.h_net.param_count() + self.f_net.param_count() + self.g_net.param_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub h_net: MlpState,
    pub f_net: MlpState,
    pub g_net: MlpState,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub cond_len: Option<usize>,
    pub loc: f64,
    pub scale: f64,
}

/// Sum over paths of `Σ_k w_k x_{i,k}`: handy linear functional for tests.
pub fn weighted_path_sum(paths: &PathBatch, weights: &Array2<f64>) -> f64 {
    (&paths.values * weights).sum_axis(Axis(1)).sum()
}
