//! Dense linear-algebra substrate on top of nalgebra.
//!
//! Everything is `f64`. Matrices are nalgebra's column-major `DMatrix`; the
//! row-major constructors here exist for the JSON formats and for tests that
//! write matrices out by hand.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative singular-value cutoff for [`pinv`] and [`lstsq`].
pub const DEFAULT_REL_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 10_000;

/// Builds a matrix from row-major entries, rejecting non-finite values.
pub fn matrix_from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    ensure!(
        entries.len() == rows * cols,
        "expected {} entries for a {rows}x{cols} matrix, got {}",
        rows * cols,
        entries.len()
    );
    ensure!(
        entries.iter().all(|v| v.is_finite()),
        "matrix entries must be finite"
    );
    Ok(Matrix::from_row_slice(rows, cols, entries))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}

pub fn vector_from(entries: &[f64]) -> Result<Vector> {
    ensure!(
        entries.iter().all(|v| v.is_finite()),
        "vector entries must be finite"
    );
    Ok(Vector::from_column_slice(entries))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Descending.
    pub eigenvalues: Vector,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

/// Moore–Penrose pseudoinverse by SVD. Singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pinv(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    ensure!(
        rel_tol > 0.0 && rel_tol < 1.0,
        "rel_tol must lie in (0, 1), got {rel_tol}"
    );
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::Numerical { rows, cols })?;
    let u = svd.u.as_ref().ok_or(Error::Numerical { rows, cols })?;
    let v_t = svd.v_t.as_ref().ok_or(Error::Numerical { rows, cols })?;
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let cutoff = rel_tol * sigma_max;
    // pinv = V diag(1/sigma) U^T, built column-scaled to skip the diagonal.
    let mut v_scaled = v_t.transpose();
    for (j, &s) in svd.singular_values.iter().enumerate() {
        let inv = if s > cutoff { 1.0 / s } else { 0.0 };
        v_scaled.column_mut(j).scale_mut(inv);
    }
    Ok(v_scaled * u.transpose())
}

/// Symmetric eigen-decomposition, eigenvalues descending. The input is
/// symmetrized as `(X + X^T) / 2` first; each eigenvector is signed so that
/// its first nonzero entry is positive.
pub fn sym_eig(x: &Matrix) -> Result<EigenResult> {
    ensure!(
        x.is_square(),
        "sym_eig needs a square matrix, got {}x{}",
        x.nrows(),
        x.ncols()
    );
    let n = x.nrows();
    if n == 0 {
        return Ok(EigenResult {
            eigenvalues: Vector::zeros(0),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let sym = (x + x.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::Numerical { rows: n, cols: n })?;

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal eigenvalues in nalgebra's order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = Vector::zeros(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Minimum-norm least-squares solution of `A X = B`.
pub fn lstsq(a: &Matrix, b: &Matrix, rel_tol: f64) -> Result<Matrix> {
    ensure!(
        a.nrows() == b.nrows(),
        "lstsq row mismatch: A is {}x{}, B is {}x{}",
        a.nrows(),
        a.ncols(),
        b.nrows(),
        b.ncols()
    );
    Ok(pinv(a, rel_tol)? * b)
}
