//! Built-in numerical checks: basis orthonormality and expansion accuracy,
//! generator and critic gradients against finite differences, the solver
//! against the analytic OU transition law, and OU eigen-coefficient decay.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use sdegan_core::discriminator::{DiscriminatorConfig, HermiteDiscriminator, Standardization};
use sdegan_core::generator::{weighted_path_sum, GeneratorConfig, NeuralSdeGenerator};
use sdegan_core::hermite::HermiteBasis;
use sdegan_core::nn::relative_error;
use sdegan_core::sde::{self, ou_eigen_coefficients, OuParams, Scheme, SolverOptions};
use sdegan_core::{rng, PathBatch, ProcessKind, ProcessSpec, TimeGrid};

/// Deliberate corruptions that must make the suite fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Scale the normalization constant of ψ₃ by 1.01.
    NormConstant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    /// One `PASS name: detail` or `FAIL name: detail` line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}

fn check(name: &'static str, outcome: Result<(bool, String), sdegan_core::Error>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run(fault: Option<Fault>) -> SelftestReport {
    let started = Instant::now();
    let basis = || -> sdegan_core::Result<HermiteBasis> {
        let mut b = HermiteBasis::with_quadrature(12, 200)?;
        if fault == Some(Fault::NormConstant) {
            let c = b.norm_constants()[3];
            b.corrupt_norm_constant(3, 1.01 * c);
        }
        Ok(b)
    };
    let checks = vec![
        check("orthonormality", basis().and_then(|b| orthonormality(&b))),
        check("expansion", expansion(fault)),
        check("generator-gradient", generator_gradient()),
        check("critic-gradient", critic_gradient()),
        check("ou-solver", ou_solver()),
        check("ou-eigen-decay", ou_eigen_decay()),
    ];
    log::info!("self-test finished in {:.1}s", started.elapsed().as_secs_f64());
    SelftestReport { checks }
}

/// Gram matrix of ψ₀..ψ₁₂ under 200-node quadrature within 1e-8 of identity.
fn orthonormality(basis: &HermiteBasis) -> sdegan_core::Result<(bool, String)> {
    let g = basis.gram_matrix()?;
    let mut worst = 0.0f64;
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    Ok((worst <= 1e-8, format!("max |G - I| = {worst:.3e} (limit 1e-8)")))
}

/// Reconstruction of N(1, 0.8²) from 17 projected coefficients within 1e-3 on
/// [-4, 4]. The corrupted basis is used for the fault run.
fn expansion(fault: Option<Fault>) -> sdegan_core::Result<(bool, String)> {
    let mut basis = HermiteBasis::new(16)?;
    if fault == Some(Fault::NormConstant) {
        let c = basis.norm_constants()[3];
        basis.corrupt_norm_constant(3, 1.01 * c);
    }
    let (m, s) = (1.0, 0.8);
    let pdf = |x: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let coeffs = basis.project_density(pdf)?;
    let grid: Vec<f64> = (0..=400).map(|i| -4.0 + 0.02 * i as f64).collect();
    let recon = basis.reconstruct_density(&coeffs, &grid)?;
    let worst = grid.iter().zip(&recon).map(|(&x, r)| (r - pdf(x)).abs()).fold(0.0, f64::max);
    Ok((worst <= 1e-3, format!("sup error {worst:.3e} on [-4, 4] (limit 1e-3)")))
}

fn probe_index(stream: u64, probe: u64, len: usize) -> usize {
    ((rng::uniform(0x5e1f, stream, probe, 0) * len as f64) as usize).min(len - 1)
}

/// Backprop through a 10-step frozen-noise unroll against central differences
/// on 5 parameters of each of the three networks.
fn generator_gradient() -> sdegan_core::Result<(bool, String)> {
    let cfg = GeneratorConfig {
        latent_dim: 3,
        hidden: 8,
        depth: 2,
        scheme: Scheme::StratHeun,
        condition: false,
    };
    let grid = TimeGrid::new(0.0, 0.1, 10)?;
    let gen = NeuralSdeGenerator::new(&cfg, grid, 5)?;
    let (batch, seed) = (4, 9);
    let w = Array2::from_shape_fn((batch, grid.points()), |(i, k)| rng::normal(0x5e1f, 1, i as u64, k as u64));
    let (_, tape) = gen.sample_paths(batch, seed, None)?;
    let grads = gen.backprop_paths(&tape, &w)?;
    let analytic = [grads.h.to_flat(), grads.f.to_flat(), grads.g.to_flat()];
    let mut worst = 0.0f64;
    for (which, analytic) in analytic.iter().enumerate() {
        let base = match which {
            0 => gen.h_net.params_flat(),
            1 => gen.f_net.params_flat(),
            _ => gen.g_net.params_flat(),
        };
        for probe in 0..5 {
            let idx = probe_index(which as u64, probe, base.len());
            let eval = |delta: f64| -> sdegan_core::Result<f64> {
                let mut g2 = gen.clone();
                let mut p = base.clone();
                p[idx] += delta;
                match which {
                    0 => g2.h_net.set_params_flat(&p)?,
                    1 => g2.f_net.set_params_flat(&p)?,
                    _ => g2.g_net.set_params_flat(&p)?,
                }
                Ok(weighted_path_sum(&g2.sample(batch, seed, None)?, &w))
            };
            let h = 1e-6;
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max(relative_error(analytic[idx], fd));
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.3e} over 15 parameters (limit 1e-4)")))
}

/// Critic path gradients against central differences on 10 path values.
fn critic_gradient() -> sdegan_core::Result<(bool, String)> {
    let grid = TimeGrid::new(0.0, 1.0, 12)?;
    let cfg = DiscriminatorConfig {
        order: 4,
        hidden: 16,
        depth: 2,
        penalty_weight: 10.0,
        score_from: 6,
    };
    let mut disc = HermiteDiscriminator::new(&cfg, grid, 3)?;
    disc.set_standardization(Standardization::new(0.5, 1.5)?);
    let batch = 3;
    let values = Array2::from_shape_fn((batch, grid.points()), |(i, k)| 0.5 + 1.5 * rng::normal(0x5e1f, 2, i as u64, k as u64));
    let paths = PathBatch::new(grid, values, 0)?;
    let weights = [0.7, -1.1, 0.4];
    let (_, tape) = disc.score_batch(&paths)?;
    let grads = disc.path_grads(&tape, &weights)?;
    let objective = |p: &PathBatch| -> sdegan_core::Result<f64> {
        let (s, _) = disc.score_batch(p)?;
        Ok(s.iter().zip(&weights).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    for probe in 0..10 {
        let i = probe_index(3, probe, batch);
        let k = cfg.score_from + probe_index(4, probe, grid.points() - cfg.score_from);
        let h = 1e-5;
        let mut up = paths.clone();
        up.values[[i, k]] += h;
        let mut down = paths.clone();
        down.values[[i, k]] -= h;
        let fd = (objective(&up)? - objective(&down)?) / (2.0 * h);
        worst = worst.max(relative_error(grads[[i, k]], fd));
    }
    Ok((worst <= 1e-5, format!("max relative error {worst:.3e} over 10 path values (limit 1e-5)")))
}

/// Euler-Maruyama OU from a fixed start: terminal mean and variance within
/// 3 standard errors of the transition law.
fn ou_solver() -> sdegan_core::Result<(bool, String)> {
    let mut spec = ProcessSpec::benchmark(ProcessKind::Ou)?;
    spec.x0_halfwidth = 0.0;
    let params = OuParams::from_spec(&spec)?;
    let grid = TimeGrid::new(0.0, 0.01, 1000)?;
    let n = 20_000;
    let paths = sde::simulate(&spec, grid, n, 17, SolverOptions::default())?;
    let x = paths.terminal();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = grid.horizon();
    let (m, v) = (params.transition_mean(spec.x0_mean, t), params.transition_variance(t));
    let z_mean = (mean - m) / (v / nf).sqrt();
    let z_var = (var - v) / (v * (2.0 / (nf - 1.0)).sqrt());
    let ok = z_mean.abs() <= 3.0 && z_var.abs() <= 3.0;
    Ok((ok, format!("mean z = {z_mean:.2}, variance z = {z_var:.2} (limit 3)")))
}

/// Log-slope of eigen-coefficients `c_n(t)` equals `-κn` within 1%.
fn ou_eigen_decay() -> sdegan_core::Result<(bool, String)> {
    let params = OuParams::from_spec(&ProcessSpec::benchmark(ProcessKind::Ou)?)?;
    let x0 = 20.0;
    let (t1, t2) = (5.0, 15.0);
    let (c1, c2) = (ou_eigen_coefficients(&params, x0, t1, 3)?, ou_eigen_coefficients(&params, x0, t2, 3)?);
    let mut worst = 0.0f64;
    for n in 1..=3 {
        let slope = (c2[n].abs().ln() - c1[n].abs().ln()) / (t2 - t1);
        let expected = -params.kappa * n as f64;
        worst = worst.max((slope / expected - 1.0).abs());
    }
    Ok((worst <= 0.01, format!("max relative slope error {worst:.3e} for n = 1..3 (limit 1e-2)")))
}
