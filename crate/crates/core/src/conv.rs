//! Convolution layers materialized as explicit matrices.
//!
//! Two operator flavors are built here: the valid (no padding, stride 1)
//! convolution matrix, which is what the network's forward pass computes,
//! and the doubly block circulant matrix of the kernel's circular
//! convolution, whose spectrum the Fourier estimator reads off directly.
//! The two operators genuinely differ; both are exposed so the gap is
//! measurable rather than assumed away.
//!
//! Vectorization is row-major throughout: `vec(X)[i·cols + j] = X[i,j]`.
//! Anchoring: kernel entry (0,0) multiplies input entry (i,j) when producing
//! output (i,j). Any consistent anchor yields the same singular values.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A single-channel 2D convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    entries: Matrix,
}

impl Kernel {
    pub fn new(entries: Matrix) -> Result<Self> {
        if !entries.is_finite() {
            return Err(Error::InvalidArgument(
                "kernel entries must be finite".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Kernel from a column vector (a `len×1` kernel).
    pub fn from_column(col: &[f64]) -> Result<Self> {
        Self::new(Matrix::new(col.len(), 1, col.to_vec())?)
    }

    /// Kernel from a row vector (a `1×len` kernel).
    pub fn from_row(row: &[f64]) -> Result<Self> {
        Self::new(Matrix::new(1, row.len(), row.to_vec())?)
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            entries: self.entries.scale(c),
        }
    }
}

/// A multi-channel convolution kernel: one 2D slice per (output, input)
/// channel pair, all of identical spatial shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    slices: Vec<Matrix>,
}

impl ConvKernel {
    /// `slices` are ordered by (out, in) pair, input channel fastest.
    pub fn new(out_channels: usize, in_channels: usize, slices: Vec<Matrix>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidArgument(
                "channel counts must be positive".into(),
            ));
        }
        if slices.len() != out_channels * in_channels {
            return Err(Error::InvalidArgument(format!(
                "expected {} slices, got {}",
                out_channels * in_channels,
                slices.len()
            )));
        }
        let (kr, kc) = (slices[0].rows(), slices[0].cols());
        for s in &slices {
            if (s.rows(), s.cols()) != (kr, kc) {
                return Err(Error::InvalidArgument(
                    "all kernel slices must share one spatial shape".into(),
                ));
            }
            if !s.is_finite() {
                return Err(Error::InvalidArgument(
                    "kernel entries must be finite".into(),
                ));
            }
        }
        Ok(Self {
            out_channels,
            in_channels,
            slices,
        })
    }

    pub fn single(kernel: Kernel) -> Self {
        Self {
            out_channels: 1,
            in_channels: 1,
            slices: vec![kernel.entries],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_rows(&self) -> usize {
        self.slices[0].rows()
    }

    pub fn kernel_cols(&self) -> usize {
        self.slices[0].cols()
    }

    pub fn slice(&self, out_ch: usize, in_ch: usize) -> &Matrix {
        &self.slices[out_ch * self.in_channels + in_ch]
    }

    pub fn slice_mut(&mut self, out_ch: usize, in_ch: usize) -> &mut Matrix {
        &mut self.slices[out_ch * self.in_channels + in_ch]
    }

    pub fn slices(&self) -> &[Matrix] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [Matrix] {
        &mut self.slices
    }
}

fn check_fits(kr: usize, kc: usize, rows: usize, cols: usize) -> Result<()> {
    if kr > rows || kc > cols {
        return Err(Error::KernelTooLarge {
            kernel: (kr, kc),
            extent: (rows, cols),
        });
    }
    Ok(())
}

/// The matrix `M` with `M · vec(X) = vec(X ∗ K)` for valid convolution of an
/// `input_rows × input_cols` input: shape
/// `(input_rows−kr+1)(input_cols−kc+1) × input_rows·input_cols`.
pub fn valid_conv_matrix(k: &Kernel, input_rows: usize, input_cols: usize) -> Result<Matrix> {
    let (kr, kc) = (k.rows(), k.cols());
    check_fits(kr, kc, input_rows, input_cols)?;
    let out_rows = input_rows - kr + 1;
    let out_cols = input_cols - kc + 1;
    let mut m = Matrix::zeros(out_rows * out_cols, input_rows * input_cols);
    for oi in 0..out_rows {
        for oj in 0..out_cols {
            let row = oi * out_cols + oj;
            for p in 0..kr {
                for q in 0..kc {
                    let col = (oi + p) * input_cols + (oj + q);
                    m[(row, col)] = k.entries()[(p, q)];
                }
            }
        }
    }
    Ok(m)
}

/// The `n² × n²` doubly block circulant matrix of the kernel zero-padded to
/// `n × n`: circular (wrap-around) convolution on an `n × n` input.
pub fn circulant_conv_matrix(k: &Kernel, n: usize) -> Result<Matrix> {
    let (kr, kc) = (k.rows(), k.cols());
    check_fits(kr, kc, n, n)?;
    let mut m = Matrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for p in 0..kr {
                for q in 0..kc {
                    let col = ((i + p) % n) * n + ((j + q) % n);
                    m[(row, col)] += k.entries()[(p, q)];
                }
            }
        }
    }
    Ok(m)
}

/// Apply the kernel to an input by direct circular convolution (no matrix).
/// Same anchoring as `circulant_conv_matrix`.
pub fn circular_convolve(k: &Kernel, input: &Matrix) -> Result<Matrix> {
    let n = input.rows();
    if input.cols() != n {
        return Err(Error::InvalidArgument(
            "circular convolution expects a square input".into(),
        ));
    }
    check_fits(k.rows(), k.cols(), n, n)?;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k.rows() {
                for q in 0..k.cols() {
                    acc += k.entries()[(p, q)] * input[((i + p) % n, (j + q) % n)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{seeded_matrix, seeded_vector};

    #[test]
    fn matches_the_worked_2x2_on_3x3_example() {
        let (k1, k2, k3, k4) = (1.0, 2.0, 3.0, 4.0);
        let k = Kernel::from_rows(&[vec![k1, k2], vec![k3, k4]]).unwrap();
        let m = valid_conv_matrix(&k, 3, 3).unwrap();
        let expected = Matrix::from_rows(&[
            vec![k1, k2, 0.0, k3, k4, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, k1, k2, 0.0, k3, k4, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, k1, k2, 0.0, k3, k4, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, k1, k2, 0.0, k3, k4],
        ])
        .unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn one_by_one_kernel_is_scaled_identity() {
        let k = Kernel::from_rows(&[vec![2.5]]).unwrap();
        let m = valid_conv_matrix(&k, 4, 4).unwrap();
        assert_eq!(m, Matrix::identity(16).scale(2.5));
        let c = circulant_conv_matrix(&k, 3).unwrap();
        assert_eq!(c, Matrix::identity(9).scale(2.5));
    }

    #[test]
    fn valid_matrix_agrees_with_sliding_window_oracle() {
        let k = Kernel::new(seeded_matrix(3, 3, 11)).unwrap();
        let m = valid_conv_matrix(&k, 5, 5).unwrap();
        for trial in 0..20u64 {
            let x = seeded_matrix(5, 5, 1000 + trial);
            let got = m.matvec(x.data());
            // direct sliding-window convolution
            for oi in 0..3 {
                for oj in 0..3 {
                    let mut want = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            want += k.entries()[(p, q)] * x[(oi + p, oj + q)];
                        }
                    }
                    let diff = (got[oi * 3 + oj] - want).abs();
                    assert!(diff <= 1e-12, "trial {trial} output ({oi},{oj}): {diff}");
                }
            }
        }
    }

    #[test]
    fn circulant_matrix_agrees_with_wraparound_oracle() {
        let k = Kernel::new(seeded_matrix(2, 2, 21)).unwrap();
        let m = circulant_conv_matrix(&k, 4).unwrap();
        for trial in 0..10u64 {
            let x = seeded_matrix(4, 4, 2000 + trial);
            let got = m.matvec(x.data());
            for i in 0..4 {
                for j in 0..4 {
                    let mut want = 0.0;
                    for p in 0..2 {
                        for q in 0..2 {
                            want += k.entries()[(p, q)] * x[((i + p) % 4, (j + q) % 4)];
                        }
                    }
                    let diff = (got[i * 4 + j] - want).abs();
                    assert!(diff <= 1e-12, "trial {trial} entry ({i},{j}): {diff}");
                }
            }
        }
    }

    #[test]
    fn circulant_structure_and_row_sums() {
        let k = Kernel::new(seeded_matrix(3, 2, 31)).unwrap();
        let n = 5;
        let m = circulant_conv_matrix(&k, n).unwrap();
        // block (bi,bj) depends only on (bi-bj) mod n; within a block,
        // entry (p,q) depends only on (p-q) mod n
        for bi in 0..n {
            for bj in 0..n {
                let (ri, rj) = ((bi + 1) % n, (bj + 1) % n);
                for p in 0..n {
                    for q in 0..n {
                        let (rp, rq) = ((p + 1) % n, (q + 1) % n);
                        assert_eq!(
                            m[(bi * n + p, bj * n + q)],
                            m[(ri * n + rp, rj * n + rq)],
                            "doubly circulant structure broken"
                        );
                    }
                }
            }
        }
        let kernel_sum: f64 = k.entries().data().iter().sum();
        for r in 0..n * n {
            let row_sum: f64 = (0..n * n).map(|c| m[(r, c)]).sum();
            assert!(
                (row_sum - kernel_sum).abs() <= 1e-12,
                "row {r} sums to {row_sum}, want {kernel_sum}"
            );
        }
    }

    #[test]
    fn all_ones_kernel_rows_sum_to_n_squared() {
        let n = 3;
        let k = Kernel::new(Matrix::new(n, n, vec![1.0; n * n]).unwrap()).unwrap();
        let m = circulant_conv_matrix(&k, n).unwrap();
        for r in 0..n * n {
            let row_sum: f64 = (0..n * n).map(|c| m[(r, c)]).sum();
            assert_eq!(row_sum, (n * n) as f64);
        }
    }

    #[test]
    fn valid_rows_are_circulant_rows_without_wraparound() {
        let k = Kernel::new(seeded_matrix(2, 2, 41)).unwrap();
        let n = 3;
        let valid = valid_conv_matrix(&k, n, n).unwrap();
        let circ = circulant_conv_matrix(&k, n).unwrap();
        // valid output (oi,oj) corresponds to circulant row oi*n+oj
        for oi in 0..n - 1 {
            for oj in 0..n - 1 {
                let vrow = oi * (n - 1) + oj;
                let crow = oi * n + oj;
                for c in 0..n * n {
                    assert_eq!(valid[(vrow, c)], circ[(crow, c)]);
                }
            }
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let k = Kernel::new(seeded_matrix(4, 4, 51)).unwrap();
        assert!(matches!(
            valid_conv_matrix(&k, 3, 5),
            Err(Error::KernelTooLarge { .. })
        ));
        assert!(matches!(
            circulant_conv_matrix(&k, 3),
            Err(Error::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn kernel_rejects_non_finite_entries() {
        let mut m = seeded_matrix(2, 2, 61);
        m[(0, 1)] = f64::NAN;
        assert!(Kernel::new(m).is_err());
        let _ = seeded_vector(3, 0); // keep helper linked
    }
}
