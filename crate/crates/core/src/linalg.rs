//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::InvalidMatrix(format!(
            "expected a square {n}x{n} matrix, found a row of length {}",
            bad.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Checks symmetry up to a relative 1e-12 and returns the exactly symmetric
/// average `(A + Aᵀ)/2`.
pub fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidMatrix("matrix is not square".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidMatrix(format!(
                    "not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Lower Cholesky factor, or `NotPositiveDefinite` carrying the smallest
/// eigenvalue.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(c) if c.l_dirty().diagonal().iter().all(|&d| d > 0.0) => Ok(c.l()),
        _ => Err(Error::NotPositiveDefinite {
            smallest_eigenvalue: Some(smallest_eigenvalue(m)),
        }),
    }
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let m = matrix_from_rows(&[vec![4.0, 2.0, 0.4], vec![2.0, 3.0, 0.5], vec![0.4, 0.5, 1.0]])
            .unwrap();
        let l = cholesky_lower(&m).unwrap();
        assert!((&l * l.transpose() - &m).amax() < 1e-14);
        assert!(l.upper_triangle().lower_triangle() == DMatrix::from_diagonal(&l.diagonal()));
    }

    #[test]
    fn rejects_singular_with_eigenvalue() {
        let m = matrix_from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        match cholesky_lower(&m) {
            Err(Error::NotPositiveDefinite {
                smallest_eigenvalue: Some(e),
            }) => assert!(e.abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn symmetry_check() {
        let m = matrix_from_rows(&[vec![1.0, 0.2], vec![0.3, 1.0]]).unwrap();
        assert!(symmetrized(&m).is_err());
        assert!(matrix_from_rows(&[vec![1.0, 0.0], vec![0.0]]).is_err());
    }
}
