//! Small dense linear-algebra helpers shared by the modules.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest singular value. Zero for empty matrices.
pub fn op_norm<T: Real>(a: MatRef<'_, T>) -> Result<T> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(T::zero());
    }
    let sv = a
        .singular_values()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    Ok(sv.iter().copied().fold(T::zero(), T::max))
}

/// Singular values in descending order.
pub fn singular_values_desc<T: Real>(a: MatRef<'_, T>) -> Result<Vec<T>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let mut sv = a
        .singular_values()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(sv)
}

/// Maximum modulus over the (complex) eigenvalues of a square matrix.
pub fn spectral_radius<T: Real>(m: MatRef<'_, T>) -> Result<T> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(T::zero());
    }
    if !all_finite(m) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let ev = m
        .eigenvalues()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    Ok(ev
        .iter()
        .map(|z| num_traits::Float::hypot(z.re, z.im))
        .fold(T::zero(), T::max))
}

pub fn all_finite<T: Real>(m: MatRef<'_, T>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

/// Builds a matrix from row-major nested vectors; all rows must share a length.
pub fn from_rows<T: Real>(rows: &[Vec<f64>]) -> Result<Mat<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged rows in matrix literal".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| T::of(rows[i][j])))
}

pub fn to_rows<T: Real>(m: MatRef<'_, T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

/// Row `i` of `m` copied into a vector.
pub fn row_vec<T: Real>(m: MatRef<'_, T>, i: usize) -> Vec<T> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

pub fn euclidean_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// `y = M x` for a dense matrix and a slice.
pub fn mat_vec<T: Real>(m: MatRef<'_, T>, x: &[T]) -> Vec<T> {
    debug_assert_eq!(m.ncols(), x.len());
    let mut y = vec![T::zero(); m.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == T::zero() {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += m[(i, j)] * xj;
        }
    }
    y
}

/// Maximum absolute entry of `a - b`.
pub fn max_abs_diff<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>) -> T {
    let mut worst = T::zero();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}

pub(crate) fn check_same_shape<T>(a: MatRef<'_, T>, b: MatRef<'_, T>, what: &str) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}
