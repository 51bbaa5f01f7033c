//! Spectral-norm estimators and the penalty machinery built on them.
//!
//! Three routes to σ are provided and cross-validated:
//!
//! * `spectral_norm_exact` — full SVD; the oracle.
//! * `spectral_norm_power` — power iteration; cheap but gap-dependent.
//! * `spectral_norm_fft`   — the Fourier route for convolution kernels: the
//!   eigenvalues of a kernel's circulant convolution matrix are the entries
//!   of the kernel's 2D Fourier transform, and because that matrix is
//!   normal, its singular values are their magnitudes. So σ is the largest
//!   transform magnitude of the zero-padded kernel.
//!
//! `fourier_diagonalizer` and `circulant_eigendecomposition` make the
//! diagonalization argument executable: Q = (1/n)(F ⊗ F) is unitary and
//! Q·A·Q* is diagonal for every doubly block circulant A, with the diagonal
//! matching the transform entries as a multiset.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::conv::{circulant_conv_matrix, valid_conv_matrix, ConvKernel, Kernel};
use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_unnormalized};
use crate::matrix::{CMatrix, Matrix};
use crate::power::power_iteration;
use crate::svd::svd;

/// Which estimator produced a `SpectralEstimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMethod {
    ExactSvd,
    PowerIteration,
    FourierTransform,
}

/// The certificate attached to a σ estimate: either the dominant singular
/// pair, or the dominant frequency with its complex amplitude.
#[derive(Debug, Clone)]
pub enum Witness {
    SingularPair { u: Vec<f64>, v: Vec<f64> },
    Frequency {
        freq_row: usize,
        freq_col: usize,
        amplitude: Complex64,
    },
}

#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub method: SpectralMethod,
    pub witness: Witness,
}

/// Knobs for power-iteration based estimates.
#[derive(Debug, Clone, Copy)]
pub struct PowerSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-9,
            seed: 0x5eed,
        }
    }
}

/// σ of the kernel's circular convolution operator at input size `n`, read
/// off the 2D Fourier transform of the zero-padded kernel.
///
/// Ties in the maximal magnitude (a zero kernel, symmetric kernels) break to
/// the smallest frequency in row-major order, which keeps gradients
/// deterministic.
pub fn spectral_norm_fft(k: &Kernel, n: usize) -> Result<SpectralEstimate> {
    let spectrum = padded_spectrum(k, n)?;
    let (freq_row, freq_col, amplitude) = dominant_frequency(&spectrum);
    Ok(SpectralEstimate {
        sigma: amplitude.norm(),
        method: SpectralMethod::FourierTransform,
        witness: Witness::Frequency {
            freq_row,
            freq_col,
            amplitude,
        },
    })
}

/// The literal four-step recipe: transform, keep only the entry of maximum
/// magnitude, inverse-transform, read the largest entry.
///
/// With one surviving frequency every inverse-transform entry has the same
/// magnitude, so "largest entry" means largest magnitude, and the inverse
/// step must be unnormalized for that magnitude to be σ itself rather than
/// σ/n². Agrees with `spectral_norm_fft` to roundoff.
pub fn spectral_norm_fft_literal(k: &Kernel, n: usize) -> Result<SpectralEstimate> {
    let spectrum = padded_spectrum(k, n)?;
    let (freq_row, freq_col, amplitude) = dominant_frequency(&spectrum);
    let mut masked = CMatrix::zeros(n, n);
    masked[(freq_row, freq_col)] = amplitude;
    let back = ifft2_unnormalized(&masked);
    let sigma = back.data().iter().fold(0.0f64, |m, z| m.max(z.norm()));
    Ok(SpectralEstimate {
        sigma,
        method: SpectralMethod::FourierTransform,
        witness: Witness::Frequency {
            freq_row,
            freq_col,
            amplitude,
        },
    })
}

/// σ via power iteration on an explicit matrix.
pub fn spectral_norm_power(
    w: &Matrix,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<SpectralEstimate> {
    let r = power_iteration(w, max_iters, tol, seed)?;
    Ok(SpectralEstimate {
        sigma: r.sigma,
        method: SpectralMethod::PowerIteration,
        witness: Witness::SingularPair { u: r.u, v: r.v },
    })
}

/// σ via full SVD; the reference the other estimators are tested against.
pub fn spectral_norm_exact(w: &Matrix) -> Result<SpectralEstimate> {
    let r = svd(w)?;
    Ok(SpectralEstimate {
        sigma: r.sigma_max(),
        method: SpectralMethod::ExactSvd,
        witness: Witness::SingularPair {
            u: r.left_column(0),
            v: r.right_column(0),
        },
    })
}

/// Power-iteration estimate that tolerates non-convergence: returns the last
/// iterate with `converged = false` instead of failing. Training uses this
/// so the documented power-method failure mode is observable without
/// aborting a run.
pub fn power_estimate_lenient(w: &Matrix, settings: &PowerSettings) -> (SpectralEstimate, bool) {
    match power_iteration(w, settings.max_iters, settings.tol, settings.seed) {
        Ok(r) => (
            SpectralEstimate {
                sigma: r.sigma,
                method: SpectralMethod::PowerIteration,
                witness: Witness::SingularPair { u: r.u, v: r.v },
            },
            true,
        ),
        Err(Error::ConvergenceNotReached { sigma, u, v, .. }) => (
            SpectralEstimate {
                sigma,
                method: SpectralMethod::PowerIteration,
                witness: Witness::SingularPair { u, v },
            },
            false,
        ),
        Err(err) => unreachable!("power iteration on validated input: {err}"),
    }
}

fn padded_spectrum(k: &Kernel, n: usize) -> Result<CMatrix> {
    if k.rows() > n || k.cols() > n {
        return Err(Error::KernelTooLarge {
            kernel: (k.rows(), k.cols()),
            extent: (n, n),
        });
    }
    let mut padded = Matrix::zeros(n, n);
    for p in 0..k.rows() {
        for q in 0..k.cols() {
            padded[(p, q)] = k.entries()[(p, q)];
        }
    }
    Ok(fft2(&padded))
}

fn dominant_frequency(spectrum: &CMatrix) -> (usize, usize, Complex64) {
    let (mut best_r, mut best_c) = (0, 0);
    let mut best_mag = spectrum[(0, 0)].norm();
    for r in 0..spectrum.rows() {
        for c in 0..spectrum.cols() {
            let mag = spectrum[(r, c)].norm();
            if mag > best_mag {
                best_mag = mag;
                best_r = r;
                best_c = c;
            }
        }
    }
    (best_r, best_c, spectrum[(best_r, best_c)])
}

/// Q = (1/n)(F ⊗ F) with F the n-point unnormalized Fourier matrix; unitary,
/// and it diagonalizes every doubly block circulant matrix of block size n.
pub fn fourier_diagonalizer(n: usize) -> CMatrix {
    assert!(n >= 1, "diagonalizer needs n >= 1");
    let mut q = CMatrix::zeros(n * n, n * n);
    let scale = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let phase = -2.0 * PI * ((i * k + j * l) % n) as f64 / n as f64;
                    q[(i * n + j, k * n + l)] = Complex64::from_polar(scale, phase);
                }
            }
        }
    }
    q
}

/// Executable form of the diagonalization argument for one kernel.
#[derive(Debug, Clone)]
pub struct CirculantEigendecomposition {
    /// The diagonalizer Q = (1/n)(F ⊗ F).
    pub q: CMatrix,
    /// Diagonal of Q·A·Q*, computed numerically from the materialized A.
    pub eigenvalues: Vec<Complex64>,
    /// Largest off-diagonal magnitude of Q·A·Q*; should be roundoff.
    pub max_off_diagonal: f64,
}

/// Materialize the circulant matrix of `k`, conjugate it by Q, and report the
/// diagonal. This is the proof path, kept separate from the fast estimator so
/// each can check the other.
pub fn circulant_eigendecomposition(k: &Kernel, n: usize) -> Result<CirculantEigendecomposition> {
    let a = circulant_conv_matrix(k, n)?.to_complex();
    let q = fourier_diagonalizer(n);
    let d = q.matmul(&a).matmul(&q.adjoint());
    let mut eigenvalues = Vec::with_capacity(n * n);
    let mut max_off = 0.0f64;
    for i in 0..n * n {
        for j in 0..n * n {
            if i == j {
                continue;
            }
            max_off = max_off.max(d[(i, j)].norm());
        }
        eigenvalues.push(d[(i, i)]);
    }
    Ok(CirculantEigendecomposition {
        q,
        eigenvalues,
        max_off_diagonal: max_off,
    })
}

/// Per-layer penalty for a convolution layer: Σ over channel pairs of the
/// slice's σ², where σ comes from the requested estimator.
///
/// The Fourier route prices the circular operator directly from each slice;
/// the exact and power routes price the valid-convolution operator the
/// forward pass actually applies (materialized at the layer's input size),
/// which is the expensive path regularized training is measured against.
pub fn conv_layer_penalty(
    kernel: &ConvKernel,
    input_rows: usize,
    input_cols: usize,
    method: SpectralMethod,
    power: &PowerSettings,
) -> Result<(f64, Vec<SpectralEstimate>)> {
    let mut penalty = 0.0;
    let mut estimates = Vec::with_capacity(kernel.out_channels() * kernel.in_channels());
    for out_ch in 0..kernel.out_channels() {
        for in_ch in 0..kernel.in_channels() {
            let slice = Kernel::new(kernel.slice(out_ch, in_ch).clone())?;
            let est = match method {
                SpectralMethod::FourierTransform => {
                    spectral_norm_fft(&slice, fft_pad_size(input_rows, input_cols))?
                }
                SpectralMethod::PowerIteration => {
                    let m = valid_conv_matrix(&slice, input_rows, input_cols)?;
                    spectral_norm_power(&m, power.max_iters, power.tol, power.seed)?
                }
                SpectralMethod::ExactSvd => {
                    let m = valid_conv_matrix(&slice, input_rows, input_cols)?;
                    spectral_norm_exact(&m)?
                }
            };
            penalty += est.sigma * est.sigma;
            estimates.push(est);
        }
    }
    Ok((penalty, estimates))
}

/// Penalty for a linear layer: σ(W)².
pub fn linear_layer_penalty(
    weight: &Matrix,
    method: SpectralMethod,
    power: &PowerSettings,
) -> Result<(f64, SpectralEstimate)> {
    let est = match method {
        // A dense weight matrix has no circulant structure for the Fourier
        // route to exploit, so "fast" here is simply the exact σ of the
        // (desk-scale) matrix.
        SpectralMethod::FourierTransform | SpectralMethod::ExactSvd => {
            spectral_norm_exact(weight)?
        }
        SpectralMethod::PowerIteration => {
            spectral_norm_power(weight, power.max_iters, power.tol, power.seed)?
        }
    };
    Ok((est.sigma * est.sigma, est))
}

/// Spatial size at which a conv layer's kernels are padded for the Fourier
/// estimator: the layer's input extent (square inputs in practice).
pub fn fft_pad_size(input_rows: usize, input_cols: usize) -> usize {
    input_rows.max(input_cols)
}

/// Gradient of (λ/2)·σ(W)² with respect to a matrix parameter: λ·σ·u·vᵀ.
pub fn penalty_gradient_matrix(est: &SpectralEstimate, lambda: f64) -> Result<Matrix> {
    match &est.witness {
        Witness::SingularPair { u, v } => Ok(Matrix::outer(u, v).scale(lambda * est.sigma)),
        Witness::Frequency { .. } => Err(Error::DegenerateWitness),
    }
}

/// Gradient of (λ/2)·σ(M(K))² with respect to the kernel entries, where M(K)
/// is the valid-convolution matrix: λ·σ·uvᵀ pulled back through the
/// materialization (each kernel entry appears once per sliding position).
pub fn penalty_gradient_valid_conv(
    est: &SpectralEstimate,
    kernel_rows: usize,
    kernel_cols: usize,
    input_rows: usize,
    input_cols: usize,
    lambda: f64,
) -> Result<Matrix> {
    let (u, v) = match &est.witness {
        Witness::SingularPair { u, v } => (u, v),
        Witness::Frequency { .. } => return Err(Error::DegenerateWitness),
    };
    let out_rows = input_rows - kernel_rows + 1;
    let out_cols = input_cols - kernel_cols + 1;
    if u.len() != out_rows * out_cols || v.len() != input_rows * input_cols {
        return Err(Error::ShapeMismatch(format!(
            "witness sizes {}x{} do not match a {kernel_rows}x{kernel_cols} kernel on a {input_rows}x{input_cols} input",
            u.len(),
            v.len()
        )));
    }
    let mut grad = Matrix::zeros(kernel_rows, kernel_cols);
    for oi in 0..out_rows {
        for oj in 0..out_cols {
            let uo = u[oi * out_cols + oj];
            if uo == 0.0 {
                continue;
            }
            for p in 0..kernel_rows {
                for q in 0..kernel_cols {
                    grad[(p, q)] += uo * v[(oi + p) * input_cols + (oj + q)];
                }
            }
        }
    }
    Ok(grad.scale(lambda * est.sigma))
}

/// Gradient of (λ/2)·σ_fft(K)² with respect to the kernel entries. With
/// dominant frequency (u*, v*) and amplitude z,
/// ∂(½|z|²)/∂K[p,q] = Re(z̄ · exp(−2πi(u*p + v*q)/n)), restricted to the
/// kernel's support. Zero exactly when σ is zero.
pub fn penalty_gradient_fft(
    est: &SpectralEstimate,
    kernel_rows: usize,
    kernel_cols: usize,
    n: usize,
    lambda: f64,
) -> Result<Matrix> {
    let (fr, fc, z) = match est.witness {
        Witness::Frequency {
            freq_row,
            freq_col,
            amplitude,
        } => (freq_row, freq_col, amplitude),
        Witness::SingularPair { .. } => return Err(Error::DegenerateWitness),
    };
    let mut grad = Matrix::zeros(kernel_rows, kernel_cols);
    let zbar = z.conj();
    for p in 0..kernel_rows {
        for q in 0..kernel_cols {
            let phase = -2.0 * PI * ((fr * p + fc * q) % n) as f64 / n as f64;
            grad[(p, q)] = lambda * (zbar * Complex64::from_polar(1.0, phase)).re;
        }
    }
    Ok(grad)
}
