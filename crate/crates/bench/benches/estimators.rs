//! How the three σ estimators scale against each other on one kernel.
//!
//! The exact and power routes must first materialize the circulant operator
//! (that cost is charged to them; it is the whole point of the comparison),
//! while the Fourier route works on the padded kernel directly.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use specnorm::conv::circulant_conv_matrix;
use specnorm::separation::{separate_kernel, separated_penalty};
use specnorm::spectral::{
    power_estimate_lenient, spectral_norm_exact, spectral_norm_fft, PowerSettings,
};
use specnorm_bench::{bench_kernel, sobel};

fn sigma_estimators(c: &mut Criterion) {
    let kernel = bench_kernel(3);
    let mut group = c.benchmark_group("sigma");
    for n in [8usize, 16] {
        group.bench_with_input(BenchmarkId::new("exact_svd", n), &n, |b, &n| {
            b.iter(|| {
                let m = circulant_conv_matrix(black_box(&kernel), n).unwrap();
                spectral_norm_exact(&m).unwrap().sigma
            })
        });
        group.bench_with_input(BenchmarkId::new("power_iteration", n), &n, |b, &n| {
            // capped budget, as in training; non-convergence keeps the
            // partial estimate
            let settings = PowerSettings {
                max_iters: 500,
                tol: 1e-9,
                seed: 1,
            };
            b.iter(|| {
                let m = circulant_conv_matrix(black_box(&kernel), n).unwrap();
                power_estimate_lenient(&m, &settings).0.sigma
            })
        });
        group.bench_with_input(BenchmarkId::new("fourier", n), &n, |b, &n| {
            b.iter(|| spectral_norm_fft(black_box(&kernel), n).unwrap().sigma)
        });
    }
    group.finish();
}

fn separation_pipeline(c: &mut Criterion) {
    let kernel = sobel();
    c.bench_function("separate_and_price", |b| {
        b.iter(|| {
            let sep = separate_kernel(black_box(&kernel)).unwrap();
            separated_penalty(&sep, 16).unwrap()
        })
    });
}

criterion_group!(benches, sigma_estimators, separation_pipeline);
criterion_main!(benches);
