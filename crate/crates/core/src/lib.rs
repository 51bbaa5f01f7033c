//! Spectral norms of convolution layers, three ways, and what they buy you.
//!
//! The crate cross-validates an exact SVD oracle, power iteration, and a
//! Fourier-transform shortcut for the spectral norm of convolution
//! operators, separates 2D kernels into rank-1 factors, and wires the
//! estimators into a small CNN training harness with spectral-norm
//! regularization, wall-clock instrumentation, and white-box adversarial
//! attacks (FGSM, DeepFool) for robustness evaluation.
//!
//! Modules map onto the moving parts:
//!
//! * [`matrix`], [`fft`], [`svd`], [`power`] — the numerical substrate;
//! * [`conv`] — convolution layers materialized as explicit matrices;
//! * [`spectral`] — the three σ estimators, the circulant diagonalization
//!   checks, per-layer penalties and their gradients;
//! * [`separation`] — rank-1 kernel separation and the separated penalty;
//! * [`nn`] — a minimal CNN with exact reverse-mode gradients;
//! * [`train`] — Normal / SN / FSN training regimes with timing;
//! * [`attack`] — FGSM and DeepFool plus robustness reports;
//! * [`data`] — synthetic datasets, dataset files, checkpoints.

pub mod attack;
pub mod conv;
pub mod data;
pub mod error;
pub mod fft;
pub mod matrix;
pub mod nn;
pub mod power;
pub mod separation;
pub mod spectral;
pub mod svd;
pub mod testutil;
pub mod train;

pub use conv::{circulant_conv_matrix, valid_conv_matrix, ConvKernel, Kernel};
pub use error::{Error, Result};
pub use fft::{fft2, ifft2};
pub use matrix::{CMatrix, Matrix};
pub use power::{power_iteration, PowerResult};
pub use separation::{is_separable, separate_kernel, SeparatedKernel};
pub use spectral::{
    spectral_norm_exact, spectral_norm_fft, spectral_norm_power, PowerSettings, SpectralEstimate,
    SpectralMethod,
};
pub use svd::{svd, SvdResult};
