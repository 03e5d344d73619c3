//! Benchmark SDEs, numerical solvers and analytic Ornstein-Uhlenbeck oracles.

mod oracle;
mod process;
mod solver;

pub use oracle::{ou_eigen_coefficients, ou_stationary_density, ou_transition_density, OuParams};
pub use process::{diffusion, drift, Dynamics, ProcessKind, ProcessSpec};
pub use solver::{
    euler_maruyama, simulate, simulate_with_increments, stratonovich_heun, Scheme, SolverOptions,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = t0 + k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::invalid(format!("invalid time grid: t0={t0}, dt={dt}")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        if !(dt * steps as f64).is_finite() {
            return Err(Error::invalid("time grid horizon is not finite"));
        }
        Ok(Self { t0, dt, steps })
    }

    /// 150 points at unit spacing: 100 conditioning points plus 50 targets.
    pub fn benchmark() -> Self {
        Self {
            t0: 0.0,
            dt: 1.0,
            steps: 149,
        }
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Time rescaled to `[0, 1]` over the grid.
    pub fn normalized_time(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }
}

/// A batch of trajectories sharing one time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub values: Array2<f64>,
    pub seed: u64,
}

impl PathBatch {
    pub fn new(grid: TimeGrid, values: Array2<f64>, seed: u64) -> Result<Self> {
        if values.ncols() != grid.points() {
            return Err(Error::DimensionMismatch {
                expected: grid.points(),
                got: values.ncols(),
            });
        }
        if let Some(((path, step), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { path, step });
        }
        Ok(Self { grid, values, seed })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Cross-section of all paths at grid index `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.grid.steps)
    }

    pub fn path(&self, i: usize) -> &[f64] {
        self.values
            .row(i)
            .to_slice()
            .expect("path batches are stored row-major")
    }

    /// Rows `rows` gathered into a new batch.
    pub fn select(&self, rows: &[usize]) -> PathBatch {
        let values = self.values.select(ndarray::Axis(0), rows);
        PathBatch {
            grid: self.grid,
            values: values.as_standard_layout().into_owned(),
            seed: self.seed,
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> PathBatch {
        let rows: Vec<usize> = (start..end).collect();
        self.select(&rows)
    }

    /// Global mean and standard deviation over every stored value.
    pub fn global_moments(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub fn same_grid(&self, other: &PathBatch) -> bool {
        self.grid == other.grid
    }
}
