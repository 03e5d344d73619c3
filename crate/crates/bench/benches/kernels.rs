use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sdegan_bench::{normal_matrix, normals};
use sdegan_core::hermite::HermiteBasis;
use sdegan_core::metrics::{kde_ise, mmd};
use sdegan_core::nn::{Activation, Mlp};
use sdegan_core::sde::{simulate, Scheme, SolverOptions};
use sdegan_core::{ProcessKind, ProcessSpec, TimeGrid};

fn hermite_features(c: &mut Criterion) {
    let mut group = c.benchmark_group("hermite_features");
    let xs = normals(10_000, 1);
    group.throughput(Throughput::Elements(xs.len() as u64));
    for order in [4, 12] {
        let basis = HermiteBasis::new(order).unwrap();
        let mut out = vec![0.0; order + 1];
        group.bench_with_input(BenchmarkId::from_parameter(order), &basis, |b, basis| {
            b.iter(|| {
                let mut acc = 0.0;
                for &x in &xs {
                    basis.features_into(x, &mut out);
                    acc += out[order];
                }
                black_box(acc)
            })
        });
    }
    group.finish();
    c.bench_function("gram_matrix_12_200", |b| {
        let basis = HermiteBasis::with_quadrature(12, 200).unwrap();
        b.iter(|| black_box(basis.gram_matrix().unwrap()))
    });
}

fn sde_simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_1000_paths");
    let grid = TimeGrid::benchmark();
    group.throughput(Throughput::Elements(1000 * grid.steps as u64));
    for (kind, scheme) in [
        (ProcessKind::Ou, Scheme::EulerMaruyama),
        (ProcessKind::Ou, Scheme::StratHeun),
        (ProcessKind::Cir, Scheme::EulerMaruyama),
    ] {
        let spec = ProcessSpec::benchmark(kind).unwrap();
        let opts = SolverOptions { scheme, substeps: 10 };
        group.bench_function(format!("{kind}_{scheme:?}"), |b| {
            b.iter(|| black_box(simulate(&spec, grid, 1000, 7, opts).unwrap()))
        });
    }
    group.finish();
}

fn mlp(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp_2x64_batch_3200");
    let net = Mlp::new(&[2, 64, 64, 5], Activation::Tanh, Activation::Identity, 3).unwrap();
    let input = normal_matrix(3200, 2, 2);
    group.bench_function("forward", |b| b.iter(|| black_box(net.forward_batch(&input).unwrap())));
    let (out, cache) = net.forward_batch(&input).unwrap();
    let grad = out.mapv(|v| 2.0 * v);
    group.bench_function("backward", |b| b.iter(|| black_box(net.backward_batch(&cache, &grad).unwrap())));
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let a = normals(1000, 3);
    let b: Vec<f64> = normals(1000, 4).iter().map(|v| v + 0.5).collect();
    c.bench_function("mmd_1000", |bench| bench.iter(|| black_box(mmd(&a, &b).unwrap())));
    c.bench_function("kde_ise_1000_256", |bench| bench.iter(|| black_box(kde_ise(&a, &b, 256).unwrap())));
}

criterion_group!(benches, hermite_features, sde_simulation, mlp, metrics);
criterion_main!(benches);
