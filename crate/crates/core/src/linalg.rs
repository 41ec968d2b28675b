//! Small dense helpers on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Flags, column by column, whether each column adds rank to the columns
/// before it. A column is dependent when its component orthogonal to the
/// accepted columns has norm below `rel_tol * max_column_norm`.
pub fn column_rank_profile(m: &DMatrix<f64>, rel_tol: f64) -> Vec<bool> {
    let scale = (0..m.ncols())
        .map(|j| m.column(j).norm())
        .fold(0.0_f64, f64::max);
    let threshold = rel_tol * scale.max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut flags = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut v = m.column(j).clone_owned();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > threshold && norm > 0.0 {
            v /= norm;
            basis.push(v);
            flags.push(true);
        } else {
            flags.push(false);
        }
    }
    flags
}

pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    column_rank_profile(m, rel_tol).iter().filter(|&&b| b).count()
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_number_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(c) => {
            let inv = c.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                Ok(inv)
            } else {
                Err(Error::Singular {
                    what,
                    condition: condition_number_sym(m),
                })
            }
        }
        None => Err(Error::Singular {
            what,
            condition: condition_number_sym(m),
        }),
    }
}

/// Moore-Penrose inverse of a symmetric matrix, discarding eigenvalues below
/// `rcond * max|eigenvalue|`.
pub fn pinv_sym(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let cut = rcond * max;
    let k = m.nrows();
    let mut out = DMatrix::zeros(k, k);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cut && lambda != 0.0 {
            let v = eig.eigenvectors.column(idx);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Horizontal concatenation; all blocks must share the row count `n`.
pub fn hcat(n: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut offset = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), n);
        out.columns_mut(offset, b.ncols()).copy_from(*b);
        offset += b.ncols();
    }
    out
}

/// `X^T diag(w) X` for column-major `X`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        for (v, wi) in col.iter_mut().zip(w) {
            *v *= *wi;
        }
    }
    x.tr_mul(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_profile_flags_dependent_columns() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 1.0, 2.0, 0.0, 1.0, 2.0, 1.0]);
        assert_eq!(column_rank_profile(&m, 1e-10), [true, false, true]);
    }

    #[test]
    fn pinv_of_singular_projector() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv_sym(&m, 1e-12);
        let back = &m * &p * &m;
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn weighted_gram_matches_explicit() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = [0.5, 1.0, 2.0];
        let explicit = x.transpose() * DMatrix::from_diagonal(&DVector::from_row_slice(&w)) * &x;
        assert!((weighted_gram(&x, &w) - explicit).norm() < 1e-12);
    }
}
