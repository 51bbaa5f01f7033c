//! Rank-1 separation of 2D kernels and the separated spectral penalty.
//!
//! A separable kernel is an outer product `K = r·cᵀ`, so convolving by K is
//! convolving by the column factor then the row factor. Training's fast
//! regularizer exploits this: separate each slice, price each 1-D factor
//! with the Fourier estimator, and penalize the sum of the two squared σ's.
//! Inseparable kernels are truncated to their best rank-1 approximation
//! (SVD truncation); the Frobenius residual is reported so the quality of
//! that approximation stays auditable.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::conv::Kernel;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::spectral::{spectral_norm_fft, SpectralEstimate};
use crate::svd::{svd, SvdResult};

/// Rank-1 factorization of a kernel: `outer(col, row)` plus a residual of
/// Frobenius norm `residual_fro`. σ₁ is split symmetrically (√σ₁ into each
/// factor); the first nonzero entry of `row` is positive so outputs are
/// reproducible despite SVD sign ambiguity.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedKernel {
    /// Column factor, length = kernel rows.
    pub col: Vec<f64>,
    /// Row factor, length = kernel cols.
    pub row: Vec<f64>,
    /// ‖K − outer(col, row)‖_F = √(Σ_{i≥2} σᵢ²).
    pub residual_fro: f64,
}

impl SeparatedKernel {
    /// `outer(col, row)`, the rank-1 reconstruction.
    pub fn reconstruct(&self) -> Matrix {
        Matrix::outer(&self.col, &self.row)
    }

    /// The column factor as a `w×1` kernel.
    pub fn col_kernel(&self) -> Result<Kernel> {
        Kernel::from_column(&self.col)
    }

    /// The row factor as a `1×h` kernel.
    pub fn row_kernel(&self) -> Result<Kernel> {
        Kernel::from_row(&self.row)
    }
}

/// Split a kernel into its dominant rank-1 factor pair.
pub fn separate_kernel(k: &Kernel) -> Result<SeparatedKernel> {
    let dec = svd(k.entries())?;
    Ok(separate_from_svd(&dec))
}

fn separate_from_svd(dec: &SvdResult) -> SeparatedKernel {
    let sigma1 = dec.singular_values[0];
    let u1 = dec.left_column(0);
    let v1 = dec.right_column(0);
    let sign = leading_sign(&v1);
    let scale = sigma1.sqrt() * sign;
    let col = u1.iter().map(|x| scale * x).collect();
    let row = v1.iter().map(|x| scale * x).collect();
    let residual_fro = dec.singular_values[1..]
        .iter()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt();
    SeparatedKernel {
        col,
        row,
        residual_fro,
    }
}

fn leading_sign(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 1.0;
    }
    for &x in v {
        if x.abs() > 1e-12 * scale {
            return x.signum();
        }
    }
    1.0
}

/// True iff the kernel is rank-1 within tolerance: σ₂ ≤ tol·σ₁. A zero
/// kernel is separable.
pub fn is_separable(k: &Kernel, tol: f64) -> bool {
    assert!(tol > 0.0, "tolerance must be positive");
    match svd(k.entries()) {
        Ok(dec) => {
            if dec.singular_values.len() < 2 {
                return true;
            }
            dec.singular_values[1] <= tol * dec.singular_values[0]
        }
        Err(_) => false,
    }
}

/// Penalty contribution of the two separated 1-D layers at input size `n`:
/// σ_fft(col as w×1)² + σ_fft(row as 1×h)².
pub fn separated_penalty(sep: &SeparatedKernel, n: usize) -> Result<f64> {
    let (col_est, row_est) = separated_estimates(sep, n)?;
    Ok(col_est.sigma * col_est.sigma + row_est.sigma * row_est.sigma)
}

/// The two factor estimates behind `separated_penalty`.
pub fn separated_estimates(
    sep: &SeparatedKernel,
    n: usize,
) -> Result<(SpectralEstimate, SpectralEstimate)> {
    let col_est = spectral_norm_fft(&sep.col_kernel()?, n)?;
    let row_est = spectral_norm_fft(&sep.row_kernel()?, n)?;
    Ok((col_est, row_est))
}

/// Exact gradient of (λ/2)·(σ_fft(col)² + σ_fft(row)²) with respect to the
/// kernel entries, where (col, row) is the rank-1 separation of the kernel.
///
/// The factors are √σ₁·u₁ and √σ₁·v₁, so with ĝ(x) the squared magnitude of
/// a vector's dominant padded-DFT coefficient, the penalty is
/// σ₁·(ĝ(u₁) + ĝ(v₁)). Differentiating needs the first-order perturbation
/// of the dominant singular triple: for dK = e_p e_qᵀ,
///
/// ```text
/// ∂σ₁     = u₁[p]·v₁[q]
/// u_jᵀ∂u₁ = (σ₁·u_j[p]·v₁[q] + σ_j·u₁[p]·v_j[q]) / (σ₁² − σ_j²),  j ≠ 1
/// v_jᵀ∂v₁ = (σ₁·v_j[q]·u₁[p] + σ_j·v₁[q]·u_j[p]) / (σ₁² − σ_j²),  j ≠ 1
/// ```
///
/// plus a null-space term (I − UUᵀ)·e_p·v₁[q]/σ₁ when the kernel has more
/// rows than singular triples (and symmetrically for columns). Terms with
/// σ_j ≈ σ₁ (a tied dominant value) are skipped; the penalty is not
/// differentiable there and callers treat such kernels as tie cases.
pub fn separated_penalty_gradient(k: &Kernel, n: usize, lambda: f64) -> Result<Matrix> {
    let (kr, kc) = (k.rows(), k.cols());
    let dec = svd(k.entries())?;
    let sigma1 = dec.singular_values[0];
    let mut grad = Matrix::zeros(kr, kc);
    if sigma1 == 0.0 {
        return Ok(grad);
    }
    let rank = dec.singular_values.len();
    let u: Vec<Vec<f64>> = (0..rank).map(|j| dec.left_column(j)).collect();
    let v: Vec<Vec<f64>> = (0..rank).map(|j| dec.right_column(j)).collect();

    let sep = separate_from_svd(&dec);
    let (col_est, row_est) = separated_estimates(&sep, n)?;
    let freq_u = match col_est.witness {
        crate::spectral::Witness::Frequency { freq_row, .. } => freq_row,
        _ => unreachable!("fft estimate carries a frequency"),
    };
    let freq_v = match row_est.witness {
        crate::spectral::Witness::Frequency { freq_col, .. } => freq_col,
        _ => unreachable!("fft estimate carries a frequency"),
    };

    // Dominant-frequency coefficients of every singular vector.
    let omega_u: Vec<Complex64> = (0..kr)
        .map(|a| Complex64::from_polar(1.0, -2.0 * PI * ((freq_u * a) % n) as f64 / n as f64))
        .collect();
    let omega_v: Vec<Complex64> = (0..kc)
        .map(|b| Complex64::from_polar(1.0, -2.0 * PI * ((freq_v * b) % n) as f64 / n as f64))
        .collect();
    let zu: Vec<Complex64> = u
        .iter()
        .map(|uj| uj.iter().zip(&omega_u).map(|(x, w)| x * w).sum())
        .collect();
    let zv: Vec<Complex64> = v
        .iter()
        .map(|vj| vj.iter().zip(&omega_v).map(|(x, w)| x * w).sum())
        .collect();
    let g_u = zu[0].norm_sqr();
    let g_v = zv[0].norm_sqr();

    let tie_gap = 1e-8 * sigma1;
    let has_left_null = kr > rank;
    let has_right_null = kc > rank;

    for p in 0..kr {
        for q in 0..kc {
            let dsigma = u[0][p] * v[0][q];
            let mut dz_u = Complex64::default();
            let mut dz_v = Complex64::default();
            for j in 1..rank {
                let sj = dec.singular_values[j];
                if sigma1 - sj <= tie_gap {
                    continue;
                }
                let denom = sigma1 * sigma1 - sj * sj;
                let a = u[j][p] * v[0][q];
                let b = u[0][p] * v[j][q];
                dz_u += zu[j] * ((sigma1 * a + sj * b) / denom);
                dz_v += zv[j] * ((sigma1 * b + sj * a) / denom);
            }
            if has_left_null {
                // component of ∂u₁ outside span(U): (e_p − Σ_j u_j u_j[p])·v₁[q]/σ₁
                let mut proj = Complex64::default();
                for j in 0..rank {
                    proj += zu[j] * u[j][p];
                }
                dz_u += (omega_u[p] - proj) * (v[0][q] / sigma1);
            }
            if has_right_null {
                let mut proj = Complex64::default();
                for j in 0..rank {
                    proj += zv[j] * v[j][q];
                }
                dz_v += (omega_v[q] - proj) * (u[0][p] / sigma1);
            }
            let dg_u = 2.0 * (zu[0].conj() * dz_u).re;
            let dg_v = 2.0 * (zv[0].conj() * dz_v).re;
            grad[(p, q)] = 0.5 * lambda * ((g_u + g_v) * dsigma + sigma1 * (dg_u + dg_v));
        }
    }
    Ok(grad)
}
