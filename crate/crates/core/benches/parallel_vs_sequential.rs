use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use argd::dynamics::{self, SpectrumSpec};
use argd::linalg::gaussian_matrix;
use argd::network::{self, Activation, Loss, NetworkSpec, SyntheticKind};
use argd::optimizer::Hyperparams;
use argd::train::{self, OptimizerKind, TrainConfig};
use argd::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [128, 256] {
        let a = gaussian_matrix(n, n, 1);
        let b = gaussian_matrix(n, n, 2);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| black_box(a.matmul_with(&b, exec).unwrap()));
            });
        }
    }
    group.finish();
}

fn dynamics_sweep(c: &mut Criterion) {
    let spectrum = SpectrumSpec { b: vec![1.0, 2.0], c: vec![1.0], shared_basis: true };
    let systems: Vec<_> = (0..16).map(|s| dynamics::make_system(6, 6, 2, &spectrum, 0.01, s).unwrap()).collect();
    let mut group = c.benchmark_group("simulate_many");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(name, |bench| bench.iter(|| black_box(dynamics::simulate_many(&systems, 300, exec))));
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let spec = NetworkSpec::new(vec![64, 128, 128, 64, 16], Activation::Relu, Loss::Mse, 3).unwrap();
    let data = network::make_synthetic(SyntheticKind::LowRankRegression { rank: 4, noise: 0.01 }, 64, 16, 256, 5)
        .unwrap()
        .batch;
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adarankgrad,
        hp: Hyperparams { alpha: 1e-3, r_max: 16, ..Hyperparams::default() },
        steps: 20,
        stop_on_convergence: false,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_layers");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |bench| bench.iter(|| black_box(train::train(&spec, &cfg, &data, exec).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, matmul, dynamics_sweep, training);
criterion_main!(benches);
