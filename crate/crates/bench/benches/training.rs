//! Per-epoch cost of the three training regimes — the timing comparison the
//! harness exists to measure. Sample counts are kept low; an SN epoch runs
//! power iteration over every materialized convolution slice.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use specnorm::train::{train, TrainConfig, TrainMethod};
use specnorm_bench::{bench_dataset, bench_network};

fn one_epoch(c: &mut Criterion) {
    let data = bench_dataset();
    let mut group = c.benchmark_group("epoch");
    group.sample_size(10);
    for method in [TrainMethod::Normal, TrainMethod::Sn, TrainMethod::Fsn] {
        group.bench_with_input(
            BenchmarkId::from_parameter(method.name()),
            &method,
            |b, &method| {
                let cfg = TrainConfig {
                    epochs: 1,
                    batch_size: 32,
                    learning_rate: 0.08,
                    lambda: 0.01,
                    seed: 3,
                    method,
                    power_iters: 30,
                    tol: 1e-6,
                    resplit_every: 0,
                };
                b.iter(|| train(bench_network(4), black_box(&data), &cfg).unwrap())
            },
        );
    }
    group.finish();
}

criterion_group!(benches, one_epoch);
criterion_main!(benches);
