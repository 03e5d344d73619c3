use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::process::{Dynamics, ProcessSpec};
use super::{PathBatch, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Itô, `x' = x + f h + g ΔW`.
    EulerMaruyama,
    /// Stratonovich predictor-corrector.
    StratHeun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub scheme: Scheme,
    /// Internal solver steps per grid interval; only grid points are stored.
    pub substeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::EulerMaruyama,
            substeps: 1,
        }
    }
}

pub fn euler_maruyama(spec: &ProcessSpec, grid: TimeGrid, batch: usize, seed: u64) -> Result<PathBatch> {
    simulate(spec, grid, batch, seed, SolverOptions::default())
}

pub fn stratonovich_heun(spec: &ProcessSpec, grid: TimeGrid, batch: usize, seed: u64) -> Result<PathBatch> {
    simulate(
        spec,
        grid,
        batch,
        seed,
        SolverOptions {
            scheme: Scheme::StratHeun,
            substeps: 1,
        },
    )
}

/// Simulate `batch` paths of an analytic process. Initial states and Brownian
/// increments are keyed by `(seed, path, step)`.
pub fn simulate(
    spec: &ProcessSpec,
    grid: TimeGrid,
    batch: usize,
    seed: u64,
    opts: SolverOptions,
) -> Result<PathBatch> {
    if batch == 0 {
        return Err(Error::invalid("batch must contain at least one path"));
    }
    if opts.substeps == 0 {
        return Err(Error::invalid("substeps must be positive"));
    }
    let dynamics = spec.dynamics()?;
    let x0: Vec<f64> = (0..batch)
        .map(|p| spec.x0_mean + spec.x0_halfwidth * (2.0 * rng::uniform(seed, stream::JITTER, p as u64, 0) - 1.0))
        .collect();
    let sqrt_h = (grid.dt / opts.substeps as f64).sqrt();
    let values = simulate_with_increments(&dynamics, grid, &x0, opts, |p, s| {
        sqrt_h * rng::normal(seed, stream::BROWNIAN, p as u64, s as u64)
    })?;
    PathBatch::new(grid, values, seed)
}

/// Core integrator with caller-supplied Brownian increments. `increment(p, s)`
/// returns `ΔW` for path `p` over internal step `s` (of width `dt / substeps`).
pub fn simulate_with_increments(
    dynamics: &Dynamics,
    grid: TimeGrid,
    x0: &[f64],
    opts: SolverOptions,
    increment: impl Fn(usize, usize) -> f64,
) -> Result<Array2<f64>> {
    let points = grid.points();
    let h = grid.dt / opts.substeps as f64;
    let mut values = Array2::zeros((x0.len(), points));
    for (p, &start) in x0.iter().enumerate() {
        let mut x = start;
        values[[p, 0]] = x;
        for k in 0..grid.steps {
            for j in 0..opts.substeps {
                let s = k * opts.substeps + j;
                let t = grid.t0 + s as f64 * h;
                let dw = increment(p, s);
                x = step(dynamics, opts.scheme, t, x, h, dw).map_err(|e| match e {
                    Error::Domain(msg) => Error::NumericalAbort(format!("path {p}, step {k}: {msg}")),
                    other => other,
                })?;
                if !x.is_finite() {
                    return Err(Error::NonFinite { path: p, step: k + 1 });
                }
            }
            values[[p, k + 1]] = x;
        }
    }
    Ok(values)
}

#[inline]
fn step(d: &Dynamics, scheme: Scheme, t: f64, x: f64, h: f64, dw: f64) -> Result<f64> {
    let f0 = d.drift(t, x)?;
    let g0 = d.diffusion(t, x)?;
    match scheme {
        Scheme::EulerMaruyama => Ok(x + f0 * h + g0 * dw),
        Scheme::StratHeun => {
            let pred = x + f0 * h + g0 * dw;
            let f1 = d.drift(t + h, pred)?;
            let g1 = d.diffusion(t + h, pred)?;
            Ok(x + 0.5 * (f0 + f1) * h + 0.5 * (g0 + g1) * dw)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{ProcessKind, ProcessSpec};

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn ou_terminal_mean_matches_closed_form() {
        let spec = ProcessSpec::benchmark(ProcessKind::Ou).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let batch = euler_maruyama(&spec, grid, 50_000, 17).unwrap();
        let (m, v) = mean_var(&batch.terminal());
        let (k, a) = (0.0658f64, 23.0);
        let want = 20.0 * (-k).exp() + a * (1.0 - (-k).exp());
        assert!((m - want).abs() < 3.0 * (v / 50_000.0).sqrt(), "{m} vs {want}");
    }

    #[test]
    fn zero_noise_is_deterministic_relaxation() {
        let spec = ProcessSpec::benchmark(ProcessKind::Ou)
            .unwrap()
            .with_param("sigma", 0.0)
            .unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 50).unwrap();
        let a = euler_maruyama(&spec, grid, 3, 1).unwrap();
        let b = euler_maruyama(&spec, grid, 3, 2).unwrap();
        let x0 = a.values[[0, 0]];
        let mut x = x0;
        for k in 0..50 {
            x += 0.0658 * (23.0 - x) * 0.1;
            assert_eq!(a.values[[0, k + 1]], x);
        }
        // only the initial jitter depends on the seed
        assert_ne!(a.values[[0, 0]], b.values[[0, 0]]);
    }

    #[test]
    fn heun_without_noise_is_ode_heun() {
        let spec = ProcessSpec::benchmark(ProcessKind::Ou)
            .unwrap()
            .with_param("sigma", 0.0)
            .unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 20).unwrap();
        let batch = stratonovich_heun(&spec, grid, 2, 9).unwrap();
        let mut x = batch.values[[1, 0]];
        for k in 0..20 {
            let f0 = 0.0658 * (23.0 - x);
            let pred = x + f0 * 0.5;
            let f1 = 0.0658 * (23.0 - pred);
            x += 0.25 * (f0 + f1);
            assert_eq!(batch.values[[1, k + 1]], x);
        }
    }

    #[test]
    fn determinism_and_batch_invariance() {
        let spec = ProcessSpec::benchmark(ProcessKind::Cir).unwrap();
        let grid = TimeGrid::new(0.0, 0.5, 40).unwrap();
        let a = euler_maruyama(&spec, grid, 64, 5).unwrap();
        let b = euler_maruyama(&spec, grid, 64, 5).unwrap();
        assert_eq!(a, b);
        let small = euler_maruyama(&spec, grid, 10, 5).unwrap();
        assert_eq!(small.values, a.values.slice(ndarray::s![..10, ..]).to_owned());
    }

    #[test]
    fn poly_drift_needs_substeps_at_unit_grid() {
        let spec = ProcessSpec::benchmark(ProcessKind::PolyDrift).unwrap();
        let grid = TimeGrid::benchmark();
        assert!(euler_maruyama(&spec, grid, 4, 1).is_err());
        let opts = SolverOptions {
            scheme: Scheme::EulerMaruyama,
            substeps: 200,
        };
        let batch = simulate(&spec, grid, 64, 1, opts).unwrap();
        assert!(batch.values.iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn rejects_empty_batch() {
        let spec = ProcessSpec::benchmark(ProcessKind::Ou).unwrap();
        assert!(euler_maruyama(&spec, TimeGrid::benchmark(), 0, 1).is_err());
    }
}
