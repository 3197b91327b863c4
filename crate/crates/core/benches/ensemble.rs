use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use gaussian_retro::ensemble::ensemble_mean;
use gaussian_retro::model::damping_channel;
use gaussian_retro::parallel::Execution;
use gaussian_retro::{GaussianMoments, ModelSpec, QuadratureLayout, TimeGrid};

fn bench_ensemble(c: &mut Criterion) {
    let one = QuadratureLayout::single_mode();
    let spec = ModelSpec::builder(one)
        .oscillator(0, 6.0)
        .channel(damping_channel(one, 0, 1.0).unwrap(), 0.5)
        .build()
        .unwrap();
    let init = GaussianMoments::new(DVector::from_vec(vec![5.0, 0.0]), DMatrix::identity(2, 2) * 10.0).unwrap();
    let grid = TimeGrid::from_interval(0.0, 1.0, 1e-3).unwrap();

    let mut group = c.benchmark_group("ensemble_mean");
    group.sample_size(10);
    for count in [16usize, 128] {
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, count), &count, |b, &n| {
                b.iter(|| ensemble_mean(&spec, &init, &grid, 0, black_box(n), exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_ensemble);
criterion_main!(benches);
