//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use sdegan_core::dataset::{generate_benchmark, Dataset};
use sdegan_core::{rng, ProcessKind};

/// Desk-scale OU dataset on the benchmark grid.
pub fn ou_dataset(n_train: usize, n_test: usize) -> Dataset {
    generate_benchmark(ProcessKind::Ou, n_train, n_test, 1).expect("benchmark OU parameters are valid")
}

/// Standard normal draws.
pub fn normals(n: usize, stream: u64) -> Vec<f64> {
    (0..n as u64).map(|i| rng::normal(0xbe, stream, i, 0)).collect()
}

/// `(rows × cols)` matrix of standard normal draws.
pub fn normal_matrix(rows: usize, cols: usize, stream: u64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| rng::normal(0xbe, stream, i as u64, j as u64))
}
