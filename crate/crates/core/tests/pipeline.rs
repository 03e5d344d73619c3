//! Simulate, persist, train and score through the public API.

use sdegan_core::dataset::{self, Dataset};
use sdegan_core::metrics::{self, EvalOptions};
use sdegan_core::sde::{OuParams, Scheme, SolverOptions};
use sdegan_core::training::{self, Checkpoint, TrainConfig, Trainer};
use sdegan_core::{ProcessKind, ProcessSpec, TimeGrid};

fn small_ou(n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let spec = ProcessSpec::benchmark(ProcessKind::Ou).unwrap();
    let solver = SolverOptions {
        scheme: Scheme::EulerMaruyama,
        substeps: 2,
    };
    dataset::generate(&spec, TimeGrid::new(0.0, 0.1, 29).unwrap(), n_train, n_test, seed, solver).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        total_gen_steps: 100,
        eval_every: 50,
        eval_paths: 100,
        gen_hidden: 16,
        disc_hidden: 16,
        latent_dim: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_survives_save_and_load() {
    let ds = small_ou(40, 20, 3);
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.meta, ds.meta);
    assert_eq!((back.train.values, back.test.values), (ds.train.values, ds.test.values));
}

#[test]
fn simulated_moments_follow_the_transition_law() {
    let spec = ProcessSpec::benchmark(ProcessKind::Ou).unwrap();
    let ds = small_ou(4000, 1, 8);
    let params = OuParams::from_spec(&spec).unwrap();
    let x = ds.train.terminal();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    // x0 ~ U(x0_mean ± h) adds (e^{-κT})² h²/3 to the transition variance
    let t = ds.train.grid.horizon();
    let decay = (-params.kappa * t).exp();
    let var = params.transition_variance(t) + (decay * spec.x0_halfwidth).powi(2) / 3.0;
    let expected = params.transition_mean(spec.x0_mean, t);
    assert!((mean - expected).abs() < 4.0 * (var / n).sqrt(), "mean {mean} vs {expected}");
}

#[test]
fn hundred_rounds_stay_finite_and_alternate() {
    let ds = small_ou(128, 100, 1);
    let cfg = small_config();
    let outcome = training::train(&ds, &cfg, |_| {}).unwrap();
    assert_eq!(outcome.log.records.len(), 100);
    for r in &outcome.log.records {
        assert!(r.gen_loss.is_finite() && r.critic_loss.is_finite(), "step {}", r.step);
    }
    outcome.log.check_alternation(cfg.critic_steps_per_gen, &cfg.hash()).unwrap();
    assert!(outcome.best_mmd.is_some());
}

#[test]
fn checkpoint_round_trip_preserves_sampling() {
    let ds = small_ou(64, 100, 2);
    let mut cfg = small_config();
    cfg.total_gen_steps = 5;
    let mut trainer = Trainer::new(cfg.clone(), &ds.train, ds.meta.target_from()).unwrap();
    for _ in 0..5 {
        trainer.round(&ds.train).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    trainer.checkpoint().save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().sampling_generator().unwrap();
    let a = training::sample_for_evaluation(trainer.sampling_generator(), &ds.test, 7).unwrap();
    let b = training::sample_for_evaluation(&restored, &ds.test, 7).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn independent_draws_of_one_process_score_near_zero() {
    let a = small_ou(10_000, 1, 20);
    let b = small_ou(10_000, 1, 21);
    let opts = EvalOptions {
        target_from: a.meta.target_from(),
        ..Default::default()
    };
    let r = metrics::evaluate(&a.train, &b.train, &opts, 0, "").unwrap();
    assert!(r.mise <= metrics::SAME_PROCESS_MISE, "{r:?}");
    assert!(r.td <= metrics::SAME_PROCESS_TD, "{r:?}");
    assert!(r.mse <= metrics::SAME_PROCESS_MSE, "{r:?}");
    assert!(r.mmd <= metrics::SAME_PROCESS_MMD, "{r:?}");
}
