//! Small shared helpers over nalgebra for symmetric/SPD matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Maximum absolute asymmetry |M - M'| tolerated before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn max_abs_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// (M + M')/2, absorbing round-off from upstream arithmetic.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Reject non-square or asymmetric input, then return the symmetrized matrix.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "square matrix expected",
            got: m.ncols(),
            expected: m.nrows(),
        });
    }
    let asymmetry = max_abs_asymmetry(m);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(symmetrize(m))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eigs = m.clone().symmetric_eigenvalues();
    let max = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let min = eigs.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization, with a singular-matrix error naming the call site.
pub fn spd_cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular {
        context,
        condition: condition_number(m),
    })
}

/// Solve M x = b for SPD M.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    Ok(spd_cholesky(m, context)?.solve(b))
}

/// M^{-1} for SPD M via its factorization.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    Ok(spd_cholesky(m, context)?.inverse())
}

/// log det M for SPD M via its factorization.
pub fn spd_log_det(m: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    let chol = spd_cholesky(m, context)?;
    let l = chol.l();
    Ok(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Row-major nested-vec form used by the JSON interfaces.
pub fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parse a row-major nested-vec matrix, rejecting ragged rows.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument(
            "matrix rows have inconsistent lengths".into(),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

/// Pack the upper triangle of a symmetric n×n matrix row-major into a vector
/// of length n(n+1)/2.
pub fn pack_upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`pack_upper_triangle`].
pub fn unpack_upper_triangle(tri: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(tri.len(), n * (n + 1) / 2);
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = tri[k];
            m[(j, i)] = tri[k];
            k += 1;
        }
    }
    m
}
