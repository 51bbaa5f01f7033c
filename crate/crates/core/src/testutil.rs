//! Support code for the unit, integration, and acceptance test suites:
//! seeded random inputs and closeness assertions. Not part of the stable API.
#![doc(hidden)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. entries uniform on [-1, 1).
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let data = (0..rows * cols)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    Matrix::new(rows, cols, data).expect("valid dimensions")
}

pub fn seeded_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

#[track_caller]
pub fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
    assert!(
        (got - want).abs() <= tol,
        "{what}: got {got}, want {want} (diff {}, tol {tol})",
        (got - want).abs()
    );
}

#[track_caller]
pub fn assert_matrix_close(got: &Matrix, want: &Matrix, tol: f64, what: &str) {
    assert_eq!(
        (got.rows(), got.cols()),
        (want.rows(), want.cols()),
        "{what}: shape"
    );
    let diff = got.sub(want).max_abs();
    assert!(
        diff <= tol,
        "{what}: max abs difference {diff} exceeds {tol}"
    );
}
