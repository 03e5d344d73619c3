//! Neural-Hermite discriminator.
//!
//! A path is scored as `(1/K) Σ_k ⟨c(τ_k, s(x_0)), Ψ_N(s(x_k))⟩` over the scored
//! window, where `s` is a frozen affine standardization, `c` is an MLP and
//! `τ_k` is the step's position in the window rescaled to `[-1, 1]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::HermiteBasis;
use crate::nn::{Activation, ForwardCache, Mlp, MlpGrads, MlpState};
use crate::rng::{self, stream};
use crate::sde::{PathBatch, TimeGrid};

/// Time input of the coefficient network: position within the scored window
/// mapped to `[-1, 1]`.
pub fn window_time(w: usize, window: usize) -> f64 {
    if window <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * w as f64 / (window - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::invalid(format!("standardization needs finite mean and std > 0, got ({mean}, {std})")));
        }
        Ok(Self { mean, std })
    }

    pub fn from_batch(batch: &PathBatch) -> Result<Self> {
        let (mean, std) = batch.global_moments();
        Self::new(mean, std)
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub order: usize,
    pub hidden: usize,
    /// Hidden layers of the coefficient network.
    pub depth: usize,
    pub penalty_weight: f64,
    /// First grid index included in the score.
    pub score_from: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            order: 4,
            hidden: 32,
            depth: 2,
            penalty_weight: 10.0,
            score_from: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteDiscriminator {
    pub basis: HermiteBasis,
    pub coeff_net: Mlp,
    pub standardization: Option<Standardization>,
    pub penalty_weight: f64,
    pub grid: TimeGrid,
    pub score_from: usize,
}

/// Intermediate values from a batch score, consumed by the backward passes.
pub struct ScoreTape {
    batch: usize,
    window: usize,
    cache: ForwardCache,
    /// `Ψ_N(s(x_ik))`, one row per (path, scored step).
    features: Array2<f64>,
    /// `Ψ_N'(s(x_ik))`.
    derivs: Array2<f64>,
}

impl ScoreTape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        self.cache.output()
    }
}

/// Losses from one evaluation of the critic objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticEval {
    /// `mean D(fake) - mean D(real) + λ · penalty`, the quantity the critic descends.
    pub loss: f64,
    /// `mean D(real) - mean D(fake)`.
    pub wasserstein: f64,
    pub penalty: f64,
}

impl HermiteDiscriminator {
    pub fn new(config: &DiscriminatorConfig, grid: TimeGrid, seed: u64) -> Result<Self> {
        if config.order == 0 || config.order > 12 {
            return Err(Error::invalid(format!("hermite order must be in 1..=12, got {}", config.order)));
        }
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(config.hidden, config.depth));
        dims.push(config.order + 1);
        let coeff_net = Mlp::new(&dims, Activation::Tanh, Activation::Identity, rng::derive_seed(seed, 12, 0))?;
        Self::from_parts(HermiteBasis::new(config.order)?, coeff_net, None, config.penalty_weight, grid, config.score_from)
    }

    pub fn from_parts(
        basis: HermiteBasis,
        coeff_net: Mlp,
        standardization: Option<Standardization>,
        penalty_weight: f64,
        grid: TimeGrid,
        score_from: usize,
    ) -> Result<Self> {
        if coeff_net.input_dim() != 2 || coeff_net.output_dim() != basis.len() {
            return Err(Error::invalid(format!(
                "coefficient net dims {:?} do not match (time, x0) -> {} coefficients",
                coeff_net.layer_dims(),
                basis.len()
            )));
        }
        if !(penalty_weight >= 0.0) {
            return Err(Error::invalid("penalty weight must be non-negative"));
        }
        if score_from > grid.steps {
            return Err(Error::invalid(format!("score window start {score_from} beyond grid of {} points", grid.points())));
        }
        Ok(Self {
            basis,
            coeff_net,
            standardization,
            penalty_weight,
            grid,
            score_from,
        })
    }

    pub fn order(&self) -> usize {
        self.basis.max_order()
    }

    /// Number of scored steps `K`.
    pub fn window(&self) -> usize {
        self.grid.points() - self.score_from
    }

    pub fn set_standardization(&mut self, s: Standardization) {
        self.standardization = Some(s);
    }

    fn standardization(&self) -> Result<Standardization> {
        self.standardization
            .ok_or_else(|| Error::invalid("discriminator standardization is unset"))
    }

    /// Score every path in `paths`, recording what the backward passes need.
    pub fn score_batch(&self, paths: &PathBatch) -> Result<(Vec<f64>, ScoreTape)> {
        if paths.grid != self.grid {
            return Err(Error::invalid("path grid differs from discriminator grid"));
        }
        self.score_values(&paths.values)
    }

    fn score_values(&self, values: &Array2<f64>) -> Result<(Vec<f64>, ScoreTape)> {
        let st = self.standardization()?;
        let (batch, window, len) = (values.nrows(), self.window(), self.basis.len());
        if values.ncols() != self.grid.points() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.points(),
                got: values.ncols(),
            });
        }
        let rows = batch * window;
        let mut input = Array2::zeros((rows, 2));
        let mut features = Array2::zeros((rows, len));
        let mut derivs = Array2::zeros((rows, len));
        let mut scratch = vec![0.0; len + 1];
        let (mut fv, mut dv) = (vec![0.0; len], vec![0.0; len]);
        for i in 0..batch {
            let s0 = st.apply(values[[i, 0]]);
            for w in 0..window {
                let k = self.score_from + w;
                let r = i * window + w;
                input[[r, 0]] = window_time(w, window);
                input[[r, 1]] = s0;
                self.basis
                    .features_with_derivatives(st.apply(values[[i, k]]), &mut scratch, &mut fv, &mut dv);
                for n in 0..len {
                    features[[r, n]] = fv[n];
                    derivs[[r, n]] = dv[n];
                }
            }
        }
        let (coeffs, cache) = self.coeff_net.forward_batch(&input)?;
        let per_row = (&coeffs * &features).sum_axis(ndarray::Axis(1));
        let scores = (0..batch)
            .map(|i| per_row.slice(ndarray::s![i * window..(i + 1) * window]).sum() / window as f64)
            .collect();
        Ok((
            scores,
            ScoreTape {
                batch,
                window,
                cache,
                features,
                derivs,
            },
        ))
    }

    /// Score a single trajectory.
    pub fn score_path(&self, path: &[f64]) -> Result<f64> {
        let values = Array2::from_shape_vec((1, path.len()), path.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.score_values(&values)?.0[0])
    }

    fn check_tape(&self, tape: &ScoreTape, weights: &[f64]) -> Result<()> {
        if weights.len() != tape.batch || tape.window != self.window() {
            return Err(Error::TapeMismatch(format!(
                "{} score weights for a tape of {} paths",
                weights.len(),
                tape.batch
            )));
        }
        Ok(())
    }

    /// Gradient of `Σ_i w_i D(x_i)` with respect to the path values.
    pub fn path_grads(&self, tape: &ScoreTape, weights: &[f64]) -> Result<Array2<f64>> {
        self.check_tape(tape, weights)?;
        let out_grad = self.coefficient_grads(tape, weights);
        let in_grad = self.coeff_net.input_grad_batch(&tape.cache, &out_grad)?;
        Ok(self.assemble_path_grads(tape, weights, &in_grad))
    }

    /// Gradients of `Σ_i w_i D(x_i)` with respect to the coefficient-net
    /// parameters and to the path values.
    pub fn backward(&self, tape: &ScoreTape, weights: &[f64]) -> Result<(MlpGrads, Array2<f64>)> {
        self.check_tape(tape, weights)?;
        let out_grad = self.coefficient_grads(tape, weights);
        let (grads, in_grad) = self.coeff_net.backward_batch(&tape.cache, &out_grad)?;
        Ok((grads, self.assemble_path_grads(tape, weights, &in_grad)))
    }

    fn coefficient_grads(&self, tape: &ScoreTape, weights: &[f64]) -> Array2<f64> {
        let window = tape.window as f64;
        let mut g = tape.features.clone();
        for (r, mut row) in g.rows_mut().into_iter().enumerate() {
            row *= weights[r / tape.window] / window;
        }
        g
    }

    fn assemble_path_grads(&self, tape: &ScoreTape, weights: &[f64], in_grad: &Array2<f64>) -> Array2<f64> {
        let std = self.standardization.map_or(1.0, |s| s.std);
        let coeffs = tape.cache.output();
        let window = tape.window;
        let mut out = Array2::zeros((tape.batch, self.grid.points()));
        for i in 0..tape.batch {
            let mut dx0 = 0.0;
            for w in 0..window {
                let r = i * window + w;
                let slope: f64 = coeffs.row(r).iter().zip(tape.derivs.row(r)).map(|(c, d)| c * d).sum();
                out[[i, self.score_from + w]] += weights[i] * slope / (window as f64 * std);
                dx0 += in_grad[[r, 1]];
            }
            out[[i, 0]] += dx0 / std;
        }
        out
    }

    /// Per-path gradient of the score with respect to the scored values,
    /// holding the `x_0` conditioning fixed.
    fn feature_slopes(&self, tape: &ScoreTape) -> Array2<f64> {
        let std = self.standardization.map_or(1.0, |s| s.std);
        let coeffs = tape.cache.output();
        let scale = 1.0 / (tape.window as f64 * std);
        Array2::from_shape_fn((tape.batch, tape.window), |(i, w)| {
            let r = i * tape.window + w;
            scale * coeffs.row(r).iter().zip(tape.derivs.row(r)).map(|(c, d)| c * d).sum::<f64>()
        })
    }

    fn interpolate(&self, real: &PathBatch, fake: &PathBatch, seed: u64) -> Result<Array2<f64>> {
        if real.len() != fake.len() {
            return Err(Error::DimensionMismatch {
                expected: real.len(),
                got: fake.len(),
            });
        }
        if !real.same_grid(fake) || real.grid != self.grid {
            return Err(Error::invalid("penalty batches must share the discriminator grid"));
        }
        let mut mix = real.values.clone();
        for (i, mut row) in mix.rows_mut().into_iter().enumerate() {
            let u = rng::uniform(seed, stream::INTERPOLATE, i as u64, 0);
            row.zip_mut_with(&fake.values.row(i), |r, f| *r = u * *r + (1.0 - u) * f);
        }
        Ok(mix)
    }

    /// Penalty `mean_i (‖∇D(x̂_i)‖₂ - 1)²` on per-path interpolates and the
    /// gradient of the penalty with respect to the coefficient-net output.
    fn penalty_and_coeff_grads(&self, tape: &ScoreTape) -> (f64, Array2<f64>) {
        let slopes = self.feature_slopes(tape);
        let std = self.standardization.map_or(1.0, |s| s.std);
        let scale = 1.0 / (tape.window as f64 * std);
        let batch = tape.batch as f64;
        let mut penalty = 0.0;
        let mut grads = Array2::zeros(tape.cache.output().dim());
        for i in 0..tape.batch {
            let norm = slopes.row(i).iter().map(|g| g * g).sum::<f64>().sqrt();
            penalty += (norm - 1.0).powi(2);
            if norm == 0.0 {
                continue;
            }
            let factor = 2.0 * (norm - 1.0) / (norm * batch);
            for w in 0..tape.window {
                let r = i * tape.window + w;
                let g = factor * slopes[[i, w]] * scale;
                grads.row_mut(r).zip_mut_with(&tape.derivs.row(r), |o, d| *o = g * d);
            }
        }
        (penalty / batch, grads)
    }

    /// Gradient penalty on interpolates `u·real + (1-u)·fake` with `u` drawn per
    /// path, and its gradient with respect to the coefficient-net parameters.
    /// The gradient norm is taken over the scored values; the `x_0` input of the
    /// coefficient net is treated as conditioning.
    pub fn gradient_penalty(&self, real: &PathBatch, fake: &PathBatch, seed: u64) -> Result<(f64, MlpGrads)> {
        let mix = self.interpolate(real, fake, seed)?;
        let (_, tape) = self.score_values(&mix)?;
        let (penalty, out_grad) = self.penalty_and_coeff_grads(&tape);
        let (grads, _) = self.coeff_net.backward_batch(&tape.cache, &out_grad)?;
        Ok((penalty, grads))
    }

    /// Critic objective `mean D(fake) - mean D(real) + λ·penalty` and its
    /// parameter gradient, evaluated in one pass over real, fake and
    /// interpolated paths.
    pub fn critic_objective(&self, real: &PathBatch, fake: &PathBatch, seed: u64) -> Result<(CriticEval, MlpGrads)> {
        let mix = self.interpolate(real, fake, seed)?;
        let b = real.len();
        let mut all = Array2::zeros((3 * b, self.grid.points()));
        all.slice_mut(ndarray::s![0..b, ..]).assign(&real.values);
        all.slice_mut(ndarray::s![b..2 * b, ..]).assign(&fake.values);
        all.slice_mut(ndarray::s![2 * b.., ..]).assign(&mix);
        let (scores, tape) = self.score_values(&all)?;
        let real_mean = scores[..b].iter().sum::<f64>() / b as f64;
        let fake_mean = scores[b..2 * b].iter().sum::<f64>() / b as f64;

        let mix_tape = ScoreTape {
            batch: b,
            window: tape.window,
            cache: tape.cache.slice_rows(2 * b * tape.window, 3 * b * tape.window),
            features: tape.features.slice(ndarray::s![2 * b * tape.window.., ..]).to_owned(),
            derivs: tape.derivs.slice(ndarray::s![2 * b * tape.window.., ..]).to_owned(),
        };
        let (penalty, pen_grad) = self.penalty_and_coeff_grads(&mix_tape);

        let mut weights = vec![-1.0 / b as f64; b];
        weights.extend(std::iter::repeat_n(1.0 / b as f64, b));
        weights.extend(std::iter::repeat_n(0.0, b));
        let mut out_grad = self.coefficient_grads(&tape, &weights);
        let lambda = self.penalty_weight;
        out_grad
            .slice_mut(ndarray::s![2 * b * tape.window.., ..])
            .zip_mut_with(&pen_grad, |o, p| *o += lambda * p);
        let (grads, _) = self.coeff_net.backward_batch(&tape.cache, &out_grad)?;
        Ok((
            CriticEval {
                loss: fake_mean - real_mean + lambda * penalty,
                wasserstein: real_mean - fake_mean,
                penalty,
            },
            grads,
        ))
    }

    pub fn to_state(&self) -> DiscriminatorState {
        DiscriminatorState {
            order: self.order(),
            coeff_net: self.coeff_net.to_state(),
            standardization: self.standardization,
            penalty_weight: self.penalty_weight,
            grid: self.grid,
            score_from: self.score_from,
        }
    }

    pub fn from_state(state: &DiscriminatorState) -> Result<Self> {
        Self::from_parts(
            HermiteBasis::new(state.order)?,
            Mlp::from_state(&state.coeff_net)?,
            state.standardization,
            state.penalty_weight,
            state.grid,
            state.score_from,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorState {
    pub order: usize,
    pub coeff_net: MlpState,
    pub standardization: Option<Standardization>,
    pub penalty_weight: f64,
    pub grid: TimeGrid,
    pub score_from: usize,
}
