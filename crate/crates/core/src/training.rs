//! WGAN-GP training of the generator against the Hermite critic.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{shuffled_indices, Dataset};
use crate::discriminator::{CriticEval, DiscriminatorConfig, DiscriminatorState, HermiteDiscriminator, Standardization};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorState, NeuralSdeGenerator};
use crate::metrics::{self, EvalOptions, MetricsReport};
use crate::nn::{adam_step, AdamState};
use crate::rng::derive_seed;
use crate::sde::{PathBatch, Scheme};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Consecutive skipped updates that abort a run.
pub const MAX_CONSECUTIVE_SKIPS: usize = 10;

mod tag {
    pub const GEN_INIT: u64 = 0x21;
    pub const DISC_INIT: u64 = 0x22;
    pub const CRITIC_FAKE: u64 = 0x31;
    pub const GEN_STEP: u64 = 0x32;
    pub const PENALTY: u64 = 0x33;
    pub const EVAL: u64 = 0x34;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub critic_steps_per_gen: usize,
    pub batch_size: usize,
    pub total_gen_steps: usize,
    pub penalty_weight: f64,
    pub seed: u64,
    pub hermite_order: usize,
    pub eval_every: usize,
    /// Held-out paths used for periodic evaluation.
    pub eval_paths: usize,
    pub latent_dim: usize,
    pub gen_hidden: usize,
    pub gen_depth: usize,
    pub disc_hidden: usize,
    pub disc_depth: usize,
    pub scheme: Scheme,
    pub condition: bool,
    /// Decay of the exponential moving average of generator weights used for
    /// evaluation and sampling; 0 disables averaging.
    pub gen_ema: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gen_lr: 1e-3,
            disc_lr: 1e-3,
            beta1: 0.5,
            beta2: 0.9,
            critic_steps_per_gen: 5,
            batch_size: 32,
            total_gen_steps: 2000,
            penalty_weight: 10.0,
            seed: 0,
            hermite_order: 4,
            eval_every: 100,
            eval_paths: 1000,
            latent_dim: 8,
            gen_hidden: 32,
            gen_depth: 2,
            disc_hidden: 32,
            disc_depth: 2,
            scheme: Scheme::StratHeun,
            condition: true,
            gen_ema: 0.995,
        }
    }
}

/// Parse `key = value` lines; `#` starts a comment. Later keys override earlier ones.
pub fn parse_kv(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message: format!("expected key = value, found {line:?}"),
            });
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::EulerMaruyama => "euler_maruyama",
        Scheme::StratHeun => "strat_heun",
    }
}

pub fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "euler_maruyama" | "em" => Ok(Scheme::EulerMaruyama),
        "strat_heun" | "heun" => Ok(Scheme::StratHeun),
        _ => Err(Error::invalid(format!("unknown scheme {s:?} (expected euler_maruyama or strat_heun)"))),
    }
}

impl TrainConfig {
    /// Fields as `key = value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gen_lr", self.gen_lr.to_string()),
            ("disc_lr", self.disc_lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("critic_steps_per_gen", self.critic_steps_per_gen.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_gen_steps", self.total_gen_steps.to_string()),
            ("penalty_weight", self.penalty_weight.to_string()),
            ("seed", self.seed.to_string()),
            ("hermite_order", self.hermite_order.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_paths", self.eval_paths.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("gen_hidden", self.gen_hidden.to_string()),
            ("gen_depth", self.gen_depth.to_string()),
            ("disc_hidden", self.disc_hidden.to_string()),
            ("disc_depth", self.disc_depth.to_string()),
            ("scheme", scheme_name(self.scheme).to_string()),
            ("condition", self.condition.to_string()),
            ("gen_ema", self.gen_ema.to_string()),
        ]
    }

    /// Apply the recognized keys of `map` on top of the defaults, removing them
    /// from the map; unrecognized keys are left for the caller.
    pub fn from_map(map: &mut BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        let keys: Vec<String> = map.keys().cloned().collect();
        for key in keys {
            let value = map[&key].clone();
            let bad = |what: &str| Error::invalid(format!("config field {key}: cannot parse {value:?} as {what}"));
            let float = || value.parse::<f64>().map_err(|_| bad("a number"));
            let int = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
            match key.as_str() {
                "gen_lr" => cfg.gen_lr = float()?,
                "disc_lr" => cfg.disc_lr = float()?,
                "beta1" => cfg.beta1 = float()?,
                "beta2" => cfg.beta2 = float()?,
                "critic_steps_per_gen" => cfg.critic_steps_per_gen = int()?,
                "batch_size" => cfg.batch_size = int()?,
                "total_gen_steps" => cfg.total_gen_steps = int()?,
                "penalty_weight" => cfg.penalty_weight = float()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                "hermite_order" => cfg.hermite_order = int()?,
                "eval_every" => cfg.eval_every = int()?,
                "eval_paths" => cfg.eval_paths = int()?,
                "latent_dim" => cfg.latent_dim = int()?,
                "gen_hidden" => cfg.gen_hidden = int()?,
                "gen_depth" => cfg.gen_depth = int()?,
                "disc_hidden" => cfg.disc_hidden = int()?,
                "disc_depth" => cfg.disc_depth = int()?,
                "scheme" => cfg.scheme = parse_scheme(&value)?,
                "condition" => cfg.condition = value.parse().map_err(|_| bad("true or false"))?,
                "gen_ema" => cfg.gen_ema = float()?,
                _ => continue,
            }
            map.remove(&key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("critic_steps_per_gen", self.critic_steps_per_gen),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("latent_dim", self.latent_dim),
            ("gen_hidden", self.gen_hidden),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("config field {name} must be positive")));
            }
        }
        for (name, lr) in [("gen_lr", self.gen_lr), ("disc_lr", self.disc_lr)] {
            if !(lr > 0.0 && lr < 1.0) {
                return Err(Error::invalid(format!("config field {name} must lie in (0, 1), got {lr}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("config field {name} must lie in [0, 1), got {b}")));
            }
        }
        if !(0.0..1.0).contains(&self.gen_ema) {
            return Err(Error::invalid(format!("config field gen_ema must lie in [0, 1), got {}", self.gen_ema)));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::invalid("config field penalty_weight must be non-negative"));
        }
        if self.hermite_order == 0 || self.hermite_order > 12 {
            return Err(Error::invalid(format!("config field hermite_order must be in 1..=12, got {}", self.hermite_order)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical `key = value` rendering, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: self.latent_dim,
            hidden: self.gen_hidden,
            depth: self.gen_depth,
            scheme: self.scheme,
            condition: self.condition,
        }
    }

    pub fn discriminator_config(&self, score_from: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            order: self.hermite_order,
            hidden: self.disc_hidden,
            depth: self.disc_depth,
            penalty_weight: self.penalty_weight,
            score_from,
        }
    }
}

/// One generator step and the critic steps that preceded it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Critic updates attempted since the previous generator step.
    pub critic_updates: u64,
    pub critic_total: u64,
    /// Means over this block's critic steps.
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub gen_loss: f64,
    /// Updates skipped in this block because of non-finite values.
    pub skipped: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    /// One JSON object per line; wall times are dropped unless requested.
    pub fn to_jsonl(&self, with_wall_time: bool) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let mut r = r.clone();
            if !with_wall_time {
                r.wall_time_s = None;
            }
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<StepRecord>, _>>()?;
        Ok(Self { records })
    }

    /// Hash of the log with wall times stripped.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl(false)?.as_bytes())))
    }

    /// Checks monotone step indices, the config hash, and that every generator
    /// step was preceded by exactly `critic_steps` critic updates.
    pub fn check_alternation(&self, critic_steps: usize, config_hash: &str) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let expect = i as u64 + 1;
            if r.step != expect || r.critic_updates != critic_steps as u64 || r.critic_total != expect * critic_steps as u64 {
                return Err(Error::invalid(format!("log record {i} breaks the alternation contract")));
            }
            if r.config_hash != config_hash {
                return Err(Error::invalid(format!("log record {i} carries a foreign config hash")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub gen_steps: u64,
    pub critic_steps: u64,
    pub target_from: usize,
    pub generator: GeneratorState,
    /// Weight-averaged generator, present when averaging is enabled.
    pub generator_ema: Option<GeneratorState>,
    pub discriminator: DiscriminatorState,
    pub gen_opt: Vec<AdamState>,
    pub disc_opt: AdamState,
    pub sampler: SamplerState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn generator(&self) -> Result<NeuralSdeGenerator> {
        NeuralSdeGenerator::from_state(&self.generator)
    }

    /// The generator used for sampling: the averaged weights when present.
    pub fn sampling_generator(&self) -> Result<NeuralSdeGenerator> {
        NeuralSdeGenerator::from_state(self.generator_ema.as_ref().unwrap_or(&self.generator))
    }

    pub fn discriminator(&self) -> Result<HermiteDiscriminator> {
        HermiteDiscriminator::from_state(&self.discriminator)
    }
}

/// Position of the without-replacement batch sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub epoch: u64,
    pub cursor: usize,
}

struct BatchSampler {
    n: usize,
    seed: u64,
    state: SamplerState,
    perm: Vec<usize>,
}

impl BatchSampler {
    fn new(n: usize, seed: u64, state: SamplerState) -> Self {
        Self {
            n,
            seed,
            perm: shuffled_indices(n, seed, state.epoch),
            state,
        }
    }

    /// Next `batch` rows; an epoch ends when fewer than `batch` unused rows remain.
    fn next(&mut self, batch: usize) -> Vec<usize> {
        if self.state.cursor + batch > self.n {
            self.state.epoch += 1;
            self.state.cursor = 0;
            self.perm = shuffled_indices(self.n, self.seed, self.state.epoch);
        }
        let rows = self.perm[self.state.cursor..self.state.cursor + batch].to_vec();
        self.state.cursor += batch;
        rows
    }
}

/// Result of a single optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome<T> {
    Applied(T),
    /// Non-finite loss or gradient; parameters untouched.
    Skipped,
}

/// The adversarial game state: both models, their optimizers and counters.
pub struct Trainer {
    pub gen: NeuralSdeGenerator,
    /// Exponential moving average of `gen`'s weights.
    pub gen_ema: Option<NeuralSdeGenerator>,
    pub disc: HermiteDiscriminator,
    pub config: TrainConfig,
    config_hash: String,
    gen_opt: Vec<AdamState>,
    disc_opt: AdamState,
    gen_steps: u64,
    critic_steps: u64,
    sampler: BatchSampler,
    consecutive_skips: usize,
}

impl Trainer {
    /// Fresh models: the generator output map and the critic standardization
    /// are fitted to `train`.
    pub fn new(config: TrainConfig, train: &PathBatch, target_from: usize) -> Result<Self> {
        config.validate()?;
        if train.len() < config.batch_size {
            return Err(Error::invalid(format!(
                "training set has {} paths, fewer than batch_size {}",
                train.len(),
                config.batch_size
            )));
        }
        let mut gen = NeuralSdeGenerator::new(&config.generator_config(), train.grid, derive_seed(config.seed, tag::GEN_INIT, 0))?;
        gen.calibrate(train)?;
        let mut disc = HermiteDiscriminator::new(
            &config.discriminator_config(target_from),
            train.grid,
            derive_seed(config.seed, tag::DISC_INIT, 0),
        )?;
        disc.set_standardization(Standardization::from_batch(train)?);
        let opt = |n: usize, lr: f64| AdamState::new(n, lr, config.beta1, config.beta2);
        let gen_opt = vec![
            opt(gen.h_net.param_count(), config.gen_lr),
            opt(gen.f_net.param_count(), config.gen_lr),
            opt(gen.g_net.param_count(), config.gen_lr),
        ];
        let disc_opt = opt(disc.coeff_net.param_count(), config.disc_lr);
        Ok(Self {
            config_hash: config.hash(),
            sampler: BatchSampler::new(train.len(), config.seed, SamplerState::default()),
            gen_ema: (config.gen_ema > 0.0).then(|| gen.clone()),
            gen,
            disc,
            config,
            gen_opt,
            disc_opt,
            gen_steps: 0,
            critic_steps: 0,
            consecutive_skips: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, n_train: usize) -> Result<Self> {
        if ckpt.gen_opt.len() != 3 {
            return Err(Error::invalid("checkpoint needs three generator optimizer states"));
        }
        Ok(Self {
            gen: ckpt.generator()?,
            gen_ema: ckpt.generator_ema.as_ref().map(NeuralSdeGenerator::from_state).transpose()?,
            disc: ckpt.discriminator()?,
            config: ckpt.config.clone(),
            config_hash: ckpt.config_hash.clone(),
            gen_opt: ckpt.gen_opt.clone(),
            disc_opt: ckpt.disc_opt.clone(),
            gen_steps: ckpt.gen_steps,
            critic_steps: ckpt.critic_steps,
            sampler: BatchSampler::new(n_train, ckpt.config.seed, ckpt.sampler),
            consecutive_skips: 0,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn gen_steps(&self) -> u64 {
        self.gen_steps
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            gen_steps: self.gen_steps,
            critic_steps: self.critic_steps,
            target_from: self.disc.score_from,
            generator: self.gen.to_state(),
            generator_ema: self.gen_ema.as_ref().map(|g| g.to_state()),
            discriminator: self.disc.to_state(),
            gen_opt: self.gen_opt.clone(),
            disc_opt: self.disc_opt.clone(),
            sampler: self.sampler.state,
        }
    }

    /// Next real batch, without replacement within an epoch.
    pub fn next_batch(&mut self, train: &PathBatch) -> PathBatch {
        let rows = self.sampler.next(self.config.batch_size);
        train.select(&rows)
    }

    fn note(&mut self, applied: bool) -> Result<()> {
        if applied {
            self.consecutive_skips = 0;
            return Ok(());
        }
        self.consecutive_skips += 1;
        log::warn!(
            "skipped update (gen step {}, critic step {}), {} in a row",
            self.gen_steps,
            self.critic_steps,
            self.consecutive_skips
        );
        if self.consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
            return Err(Error::NumericalAbort(format!(
                "{} consecutive updates skipped for non-finite values at generator step {}",
                self.consecutive_skips, self.gen_steps
            )));
        }
        Ok(())
    }

    /// One critic update on `real` against fresh generator samples conditioned
    /// on the same paths. Descends `mean D(fake) - mean D(real) + λ·penalty`.
    pub fn critic_step(&mut self, real: &PathBatch, seed: u64) -> Result<StepOutcome<CriticEval>> {
        if real.grid != self.gen.grid {
            return Err(Error::invalid("real batch grid differs from generator grid"));
        }
        self.critic_steps += 1;
        let fake = match self.gen.sample(real.len(), derive_seed(seed, tag::CRITIC_FAKE, 0), Some(real)) {
            Ok(f) => f,
            Err(Error::NonFinite { .. }) => {
                self.note(false)?;
                return Ok(StepOutcome::Skipped);
            }
            Err(e) => return Err(e),
        };
        let (eval, grads) = self.disc.critic_objective(real, &fake, derive_seed(seed, tag::PENALTY, 0))?;
        let applied = eval.loss.is_finite() && adam_step(&mut self.disc.coeff_net, &grads, &mut self.disc_opt)?;
        self.note(applied)?;
        Ok(if applied { StepOutcome::Applied(eval) } else { StepOutcome::Skipped })
    }

    /// One generator update descending `-mean D(G(v))` through the
    /// frozen-noise unroll; the critic is not modified.
    pub fn generator_step(&mut self, context: &PathBatch, seed: u64) -> Result<StepOutcome<f64>> {
        self.gen_steps += 1;
        let batch = self.config.batch_size;
        let (fake, tape) = match self.gen.sample_paths(batch, seed, Some(context)) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                self.note(false)?;
                return Ok(StepOutcome::Skipped);
            }
            Err(e) => return Err(e),
        };
        let (scores, score_tape) = self.disc.score_batch(&fake)?;
        let loss = -scores.iter().sum::<f64>() / batch as f64;
        let weights = vec![-1.0 / batch as f64; batch];
        let path_grads = self.disc.path_grads(&score_tape, &weights)?;
        let grads = self.gen.backprop_paths(&tape, &path_grads)?;
        if !loss.is_finite() || !grads.is_finite() {
            self.note(false)?;
            return Ok(StepOutcome::Skipped);
        }
        let mut applied = adam_step(&mut self.gen.h_net, &grads.h, &mut self.gen_opt[0])?;
        applied &= adam_step(&mut self.gen.f_net, &grads.f, &mut self.gen_opt[1])?;
        applied &= adam_step(&mut self.gen.g_net, &grads.g, &mut self.gen_opt[2])?;
        self.note(applied)?;
        if applied {
            self.update_ema();
        }
        Ok(StepOutcome::Applied(loss))
    }

    /// Blend the current generator weights into the average. The decay ramps
    /// up as `(1 + t) / (10 + t)` so early averages are not dominated by the
    /// initialization.
    fn update_ema(&mut self) {
        let Some(ema) = self.gen_ema.as_mut() else { return };
        let t = self.gen_steps as f64;
        let decay = self.config.gen_ema.min((1.0 + t) / (10.0 + t));
        for (avg, cur) in [
            (&mut ema.h_net, &self.gen.h_net),
            (&mut ema.f_net, &self.gen.f_net),
            (&mut ema.g_net, &self.gen.g_net),
        ] {
            for (la, lc) in avg.layers_mut().iter_mut().zip(cur.layers()) {
                la.weight.zip_mut_with(&lc.weight, |a, &c| *a = decay * *a + (1.0 - decay) * c);
                la.bias.zip_mut_with(&lc.bias, |a, &c| *a = decay * *a + (1.0 - decay) * c);
            }
        }
    }

    /// The generator used for evaluation: the weight average when enabled.
    pub fn sampling_generator(&self) -> &NeuralSdeGenerator {
        self.gen_ema.as_ref().unwrap_or(&self.gen)
    }

    /// `critic_steps_per_gen` critic updates followed by one generator update.
    pub fn round(&mut self, train: &PathBatch) -> Result<StepRecord> {
        let started = Instant::now();
        let k = self.config.critic_steps_per_gen;
        let (mut loss, mut wass, mut pen, mut applied, mut skipped) = (0.0, 0.0, 0.0, 0u64, 0u64);
        for _ in 0..k {
            let real = self.next_batch(train);
            let seed = derive_seed(self.config.seed, tag::CRITIC_FAKE, self.critic_steps);
            match self.critic_step(&real, seed)? {
                StepOutcome::Applied(e) => {
                    loss += e.loss;
                    wass += e.wasserstein;
                    pen += e.penalty;
                    applied += 1;
                }
                StepOutcome::Skipped => skipped += 1,
            }
        }
        let context = self.next_batch(train);
        let seed = derive_seed(self.config.seed, tag::GEN_STEP, self.gen_steps);
        let gen_loss = match self.generator_step(&context, seed)? {
            StepOutcome::Applied(l) => l,
            StepOutcome::Skipped => {
                skipped += 1;
                f64::NAN
            }
        };
        let n = applied.max(1) as f64;
        Ok(StepRecord {
            step: self.gen_steps,
            critic_updates: k as u64,
            critic_total: self.critic_steps,
            critic_loss: if applied > 0 { loss / n } else { f64::NAN },
            wasserstein: if applied > 0 { wass / n } else { f64::NAN },
            penalty: if applied > 0 { pen / n } else { f64::NAN },
            gen_loss,
            skipped,
            config_hash: self.config_hash.clone(),
            wall_time_s: Some(started.elapsed().as_secs_f64()),
            metrics: None,
        })
    }

    /// Metrics of generator samples against the first `eval_paths` test paths,
    /// using a fixed sampling seed so evaluations are comparable across steps.
    pub fn evaluate(&self, held_out: &PathBatch) -> Result<MetricsReport> {
        evaluate_generator(self.sampling_generator(), held_out, self.disc.score_from, self.config.seed, &self.config_hash)
    }
}

/// The generator samples [`evaluate_generator`] scores: one path per
/// reference path, conditioned on it.
pub fn sample_for_evaluation(gen: &NeuralSdeGenerator, reference: &PathBatch, seed: u64) -> Result<PathBatch> {
    gen.sample(reference.len(), derive_seed(seed, tag::EVAL, 0), Some(reference))
}

/// Sample as many paths as `reference` holds, each conditioned on the matching
/// reference path, and compute all four metrics.
pub fn evaluate_generator(
    gen: &NeuralSdeGenerator,
    reference: &PathBatch,
    target_from: usize,
    seed: u64,
    config_hash: &str,
) -> Result<MetricsReport> {
    let fake = sample_for_evaluation(gen, reference, seed)?;
    let eval_seed = derive_seed(seed, tag::EVAL, 0);
    let opts = EvalOptions {
        target_from,
        ..Default::default()
    };
    metrics::evaluate(reference, &fake, &opts, eval_seed, config_hash)
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub final_checkpoint: Checkpoint,
    /// Checkpoint with the lowest held-out MMD among the evaluations.
    pub best_checkpoint: Option<Checkpoint>,
    pub best_mmd: Option<f64>,
}

/// Full training run. `progress` is called after every generator step.
pub fn train(dataset: &Dataset, config: &TrainConfig, mut progress: impl FnMut(&StepRecord)) -> Result<TrainOutcome> {
    let target_from = dataset.meta.target_from();
    if dataset.train.grid != dataset.meta.grid || dataset.test.grid != dataset.meta.grid {
        return Err(Error::invalid("dataset splits disagree with the sidecar grid"));
    }
    let mut trainer = Trainer::new(config.clone(), &dataset.train, target_from)?;
    let held_out = dataset.test.slice_rows(0, config.eval_paths.min(dataset.test.len()));
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    for step in 1..=config.total_gen_steps {
        let mut record = trainer.round(&dataset.train)?;
        if step % config.eval_every == 0 || step == config.total_gen_steps {
            let report = trainer.evaluate(&held_out)?;
            log::debug!(
                "step {step}: mise {:.4} td {:.4} mse {:.4} mmd {:.4}",
                report.mise,
                report.td,
                report.mse,
                report.mmd
            );
            if best.as_ref().is_none_or(|(m, _)| report.mmd < *m) {
                best = Some((report.mmd, trainer.checkpoint()));
            }
            record.metrics = Some(report);
        }
        progress(&record);
        log.records.push(record);
    }
    let (best_mmd, best_checkpoint) = match best {
        Some((m, c)) => (Some(m), Some(c)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        log,
        final_checkpoint: trainer.checkpoint(),
        best_checkpoint,
        best_mmd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_benchmark;
    use crate::nn::{relative_error, Activation, Mlp};
    use crate::{rng, ProcessKind, TimeGrid};
    use ndarray::Array2;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            total_gen_steps: 3,
            eval_every: 2,
            eval_paths: 120,
            gen_hidden: 8,
            disc_hidden: 8,
            latent_dim: 3,
            ..Default::default()
        }
    }

    fn tiny_dataset() -> Dataset {
        generate_benchmark(ProcessKind::Ou, 64, 120, 7).unwrap()
    }

    #[test]
    fn kv_round_trip_and_field_errors() {
        let cfg = TrainConfig {
            gen_lr: 3e-4,
            scheme: Scheme::EulerMaruyama,
            ..Default::default()
        };
        let mut map = parse_kv(&(cfg.to_kv() + "dataset = data/ou # comment\n"), "cfg").unwrap();
        let back = TrainConfig::from_map(&mut map).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(map.len(), 1);
        let mut bad = parse_kv("batch_size = many\n", "cfg").unwrap();
        let err = TrainConfig::from_map(&mut bad).unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
        assert!(matches!(parse_kv("oops\n", "cfg"), Err(Error::Parse { line: 1, .. })));
        let mut lr = parse_kv("gen_lr = 2\n", "cfg").unwrap();
        assert!(TrainConfig::from_map(&mut lr).is_err());
        assert_ne!(cfg.hash(), TrainConfig::default().hash());
    }

    #[test]
    fn zero_critic_gives_zero_wasserstein_on_identical_distributions() {
        // Real and fake are both the generator's own samples; with the critic
        // zeroed the estimate is exactly zero.
        let ds = tiny_dataset();
        let mut t = Trainer::new(tiny_config(), &ds.train, 100).unwrap();
        t.disc.coeff_net = Mlp::zeros(t.disc.coeff_net.layer_dims(), Activation::Tanh, Activation::Identity).unwrap();
        let real = t.gen.sample(16, 3, Some(&ds.train)).unwrap();
        let (eval, _) = t.disc.critic_objective(&real, &real, 1).unwrap();
        assert_eq!(eval.wasserstein, 0.0);
        assert_eq!(eval.penalty, 1.0);
    }

    #[test]
    fn unpenalized_critic_objective_increases_on_separable_sets() {
        let grid = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let real = PathBatch::new(grid, Array2::from_shape_fn((32, 6), |(i, k)| 1.0 + 0.1 * rng::normal(1, 0, i as u64, k as u64)), 0).unwrap();
        let fake = PathBatch::new(grid, Array2::from_shape_fn((32, 6), |(i, k)| -1.0 + 0.1 * rng::normal(2, 0, i as u64, k as u64)), 0).unwrap();
        let cfg = DiscriminatorConfig {
            order: 3,
            hidden: 16,
            depth: 2,
            penalty_weight: 0.0,
            score_from: 2,
        };
        let mut disc = HermiteDiscriminator::new(&cfg, grid, 5).unwrap();
        disc.set_standardization(Standardization::new(0.0, 1.0).unwrap());
        let mut opt = AdamState::new(disc.coeff_net.param_count(), 1e-3, 0.5, 0.9);
        let mut prev = f64::NEG_INFINITY;
        for step in 0..10 {
            let (eval, grads) = disc.critic_objective(&real, &fake, step).unwrap();
            assert!(eval.wasserstein > prev, "step {step}: {} <= {prev}", eval.wasserstein);
            prev = eval.wasserstein;
            adam_step(&mut disc.coeff_net, &grads, &mut opt).unwrap();
        }
    }

    #[test]
    fn zero_critic_leaves_generator_unchanged() {
        let ds = tiny_dataset();
        let mut t = Trainer::new(tiny_config(), &ds.train, 100).unwrap();
        t.disc.coeff_net = Mlp::zeros(t.disc.coeff_net.layer_dims(), Activation::Tanh, Activation::Identity).unwrap();
        let before = t.gen.clone();
        let ctx = ds.train.slice_rows(0, 16);
        let out = t.generator_step(&ctx, 4).unwrap();
        assert_eq!(out, StepOutcome::Applied(-0.0));
        assert_eq!(t.gen.f_net.params_flat(), before.f_net.params_flat());
        assert_eq!(t.gen.h_net.params_flat(), before.h_net.params_flat());
    }

    #[test]
    fn generator_loss_gradient_matches_finite_differences() {
        let grid = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let values = Array2::from_shape_fn((16, 11), |(i, k)| 1.0 + 0.05 * k as f64 + 0.3 * rng::normal(8, 0, i as u64, k as u64));
        let train = PathBatch::new(grid, values, 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            gen_hidden: 6,
            disc_hidden: 6,
            latent_dim: 2,
            ..Default::default()
        };
        let t = Trainer::new(cfg, &train, 5).unwrap();
        let ctx = train.slice_rows(0, 4);
        let loss = |gen: &NeuralSdeGenerator| {
            let fake = gen.sample(4, 9, Some(&ctx)).unwrap();
            -t.disc.score_batch(&fake).unwrap().0.iter().sum::<f64>() / 4.0
        };
        let (fake, tape) = t.gen.sample_paths(4, 9, Some(&ctx)).unwrap();
        let (_, st) = t.disc.score_batch(&fake).unwrap();
        let pg = t.disc.path_grads(&st, &[-0.25; 4]).unwrap();
        let grads = t.gen.backprop_paths(&tape, &pg).unwrap();
        let flat = grads.f.to_flat();
        let base = t.gen.f_net.params_flat();
        for probe in 0..3u64 {
            let idx = (rng::uniform(5, 0, probe, 0) * base.len() as f64) as usize;
            let eval = |d: f64| {
                let mut g = t.gen.clone();
                let mut p = base.clone();
                p[idx] += d;
                g.f_net.set_params_flat(&p).unwrap();
                loss(&g)
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            assert!(relative_error(flat[idx], fd) <= 1e-4, "{} vs {fd}", flat[idx]);
        }
    }

    #[test]
    fn zero_step_run_returns_initial_models() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            total_gen_steps: 0,
            ..tiny_config()
        };
        let out = train(&ds, &cfg, |_| {}).unwrap();
        assert!(out.log.records.is_empty());
        assert!(out.best_checkpoint.is_none());
        let init = Trainer::new(cfg, &ds.train, 100).unwrap().checkpoint();
        assert_eq!(out.final_checkpoint, init);
    }

    #[test]
    fn runs_are_reproducible_and_alternate() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let a = train(&ds, &cfg, |_| {}).unwrap();
        let b = train(&ds, &cfg, |_| {}).unwrap();
        assert_eq!(a.log.content_hash().unwrap(), b.log.content_hash().unwrap());
        assert_eq!(a.final_checkpoint, b.final_checkpoint);
        a.log.check_alternation(cfg.critic_steps_per_gen, &cfg.hash()).unwrap();
        assert_eq!(a.log.records.len(), 3);
        assert!(a.log.records[1].metrics.is_some() && a.log.records[2].metrics.is_some());
        assert!(a.log.records.iter().all(|r| r.gen_loss.is_finite() && r.skipped == 0));
        let text = a.log.to_jsonl(true).unwrap();
        assert_eq!(TrainLog::from_jsonl(&text).unwrap(), a.log);
    }

    #[test]
    fn checkpoint_reload_reproduces_metrics() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let out = train(&ds, &cfg, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("final.json");
        out.final_checkpoint.save(&path).unwrap();
        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, out.final_checkpoint);
        let held_out = ds.test.slice_rows(0, cfg.eval_paths);
        let report = evaluate_generator(&ckpt.sampling_generator().unwrap(), &held_out, ckpt.target_from, cfg.seed, &ckpt.config_hash).unwrap();
        assert_eq!(Some(&report), out.log.records.last().unwrap().metrics.as_ref());
    }

    #[test]
    fn resumed_trainer_continues_identically() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let mut a = Trainer::new(cfg.clone(), &ds.train, 100).unwrap();
        a.round(&ds.train).unwrap();
        let ckpt = a.checkpoint();
        let r1 = a.round(&ds.train).unwrap();
        let mut b = Trainer::from_checkpoint(&ckpt, ds.train.len()).unwrap();
        let r2 = b.round(&ds.train).unwrap();
        assert_eq!(r1.gen_loss, r2.gen_loss);
        assert_eq!(a.checkpoint(), b.checkpoint());
    }

    #[test]
    fn batches_cover_each_epoch_without_replacement() {
        let mut s = BatchSampler::new(10, 1, SamplerState::default());
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next(3)).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        s.next(3);
        assert_eq!(s.state.epoch, 1);
    }
}
