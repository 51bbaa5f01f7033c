//! Shared fixtures for the criterion benchmarks.

use specnorm::conv::Kernel;
use specnorm::data::{generate_synthetic, Dataset};
use specnorm::matrix::Matrix;
use specnorm::nn::Network;
use specnorm::testutil::seeded_matrix;

pub fn bench_kernel(size: usize) -> Kernel {
    Kernel::new(seeded_matrix(size, size, 7)).expect("finite kernel")
}

pub fn sobel() -> Kernel {
    Kernel::new(
        Matrix::from_rows(&[
            vec![-1.0, 0.0, 1.0],
            vec![-2.0, 0.0, 2.0],
            vec![-1.0, 0.0, 1.0],
        ])
        .expect("well-formed"),
    )
    .expect("finite kernel")
}

pub fn bench_dataset() -> Dataset {
    generate_synthetic(3, 40, 16, 11).expect("valid generator settings")
}

pub fn bench_network(seed: u64) -> Network {
    Network::small_cnn(16, 16, 3, (3, 3), seed).expect("valid architecture")
}
