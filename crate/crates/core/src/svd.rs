//! Singular value decomposition by one-sided Jacobi rotations.
//!
//! This is the oracle the faster spectral-norm estimators are validated
//! against, so it favors accuracy and determinism: fixed sweep order, no
//! randomization, and explicit orthonormal completion for the null space.
//! Matrices here are desk-scale (circulant operators up to a few thousand
//! entries and tiny kernels), well within Jacobi's comfort zone.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};

/// Thin SVD: `input = U · diag(σ) · Vᵀ` with `r = min(rows, cols)` columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// rows × r, orthonormal columns.
    pub left_vectors: Matrix,
    /// cols × r, orthonormal columns.
    pub right_vectors: Matrix,
}

impl SvdResult {
    /// Largest singular value (zero only for the zero matrix).
    pub fn sigma_max(&self) -> f64 {
        self.singular_values[0]
    }

    /// `U diag(σ) Vᵀ`, for reconstruction checks.
    pub fn reconstruct(&self) -> Matrix {
        let r = self.singular_values.len();
        let (m, n) = (self.left_vectors.rows(), self.right_vectors.rows());
        let mut out = Matrix::zeros(m, n);
        for k in 0..r {
            let s = self.singular_values[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.left_vectors[(i, k)] * s;
                for j in 0..n {
                    out[(i, j)] += us * self.right_vectors[(j, k)];
                }
            }
        }
        out
    }

    pub fn left_column(&self, k: usize) -> Vec<f64> {
        (0..self.left_vectors.rows())
            .map(|i| self.left_vectors[(i, k)])
            .collect()
    }

    pub fn right_column(&self, k: usize) -> Vec<f64> {
        (0..self.right_vectors.rows())
            .map(|i| self.right_vectors[(i, k)])
            .collect()
    }
}

const MAX_SWEEPS: usize = 100;

/// Full (thin) SVD of a real matrix.
///
/// Deterministic for identical input. Fails with `NumericalFailure` only if
/// the sweep cap is exhausted, which signals pathological input.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(SvdResult {
            singular_values: t.singular_values,
            left_vectors: t.right_vectors,
            right_vectors: t.left_vectors,
        })
    }
}

/// One-sided Jacobi on the columns of a tall (rows ≥ cols) matrix.
fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = (m.rows(), m.cols());
    // Column-major working copy: a[j] is the j-th column.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m[(i, j)]).collect())
        .collect();
    let mut v = Matrix::identity(cols);

    let tol = 1e-15;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                let gamma = dot(&a[i], &a[j]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                // Jacobi rotation that orthogonalizes columns i and j.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // columns i and j are rotated in lockstep; split the slice
                // so both can be borrowed mutably
                let (head, tail) = a.split_at_mut(j);
                let (col_i, col_j) = (&mut head[i], &mut tail[0]);
                for (ai, aj) in col_i.iter_mut().zip(col_j.iter_mut()) {
                    let (x, y) = (*ai, *aj);
                    *ai = c * x - s * y;
                    *aj = s * x + c * y;
                }
                for r in 0..cols {
                    let vi = v[(r, i)];
                    let vj = v[(r, j)];
                    v[(r, i)] = c * vi - s * vj;
                    v[(r, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "one-sided Jacobi did not settle within {MAX_SWEEPS} sweeps on a {rows}x{cols} matrix"
        )));
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = a.iter().map(|col| norm2(col)).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let singular_values: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    let sigma_max = singular_values[0];
    // Columns whose norm is at noise level have unreliable directions; they
    // get replaced by an orthonormal completion below.
    let negligible = sigma_max * rows.max(cols) as f64 * f64::EPSILON * 8.0;

    let mut u = Matrix::zeros(rows, cols);
    let mut fixed: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for (out_k, &src) in order.iter().enumerate() {
        let col = if norms[src] > negligible && norms[src] > 0.0 {
            let inv = 1.0 / norms[src];
            a[src].iter().map(|x| x * inv).collect::<Vec<f64>>()
        } else {
            complete_orthonormal(rows, &fixed)?
        };
        for r in 0..rows {
            u[(r, out_k)] = col[r];
        }
        fixed.push(col);
    }

    let mut v_sorted = Matrix::zeros(cols, cols);
    for (out_k, &src) in order.iter().enumerate() {
        for r in 0..cols {
            v_sorted[(r, out_k)] = v[(r, src)];
        }
    }

    Ok(SvdResult {
        singular_values,
        left_vectors: u,
        right_vectors: v_sorted,
    })
}

/// Deterministic unit vector orthogonal to everything in `fixed`: take the
/// standard basis vector with the largest residual and normalize it.
fn complete_orthonormal(dim: usize, fixed: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[e] = 1.0;
        for f in fixed {
            let proj = dot(&cand, f);
            for (c, fv) in cand.iter_mut().zip(f) {
                *c -= proj * fv;
            }
        }
        let n = norm2(&cand);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, cand));
        }
    }
    let (n, mut cand) = best.expect("dim >= 1");
    if n <= 1e-12 {
        return Err(Error::NumericalFailure(
            "orthonormal completion failed".into(),
        ));
    }
    // One re-orthogonalization pass keeps the basis orthogonal to machine
    // precision even when the residual was small.
    for f in fixed {
        let proj = dot(&cand, f);
        for (c, fv) in cand.iter_mut().zip(f) {
            *c -= proj * fv;
        }
    }
    let n = norm2(&cand);
    for c in cand.iter_mut() {
        *c /= n;
    }
    Ok(cand)
}
