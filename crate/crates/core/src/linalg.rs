//! Small dense linear-algebra helpers shared by the estimator and the tests.

use crate::{Error, Matrix, Result, Vector};
use alloc::format;

/// Relative cutoff below which eigenvalues are treated as zero: `√ε`, the
/// usual default for generalized inverses.
pub const PINV_RTOL: f64 = 1.4901161193847656e-8;

/// Symmetric generalized inverse together with the numerical rank.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: Matrix,
    pub rank: usize,
}

/// Moore–Penrose inverse of a symmetric matrix via its eigendecomposition.
///
/// Eigenvalues with magnitude below `PINV_RTOL` times the largest magnitude
/// are dropped, so exactly duplicated columns in a cross-product matrix are
/// neutralized instead of blowing up.
pub fn pinv_symmetric(m: &Matrix) -> Result<PseudoInverse> {
    pinv_symmetric_rtol(m, PINV_RTOL)
}

/// [`pinv_symmetric`] with an explicit relative cutoff.
pub fn pinv_symmetric_rtol(m: &Matrix, rtol: f64) -> Result<PseudoInverse> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "pseudo-inverse of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let k = m.nrows();
    if k == 0 {
        return Ok(PseudoInverse {
            matrix: Matrix::zeros(0, 0),
            rank: 0,
        });
    }
    let eig = symmetrize(m).symmetric_eigen();
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = rtol * largest;
    let mut out = Matrix::zeros(k, k);
    let mut rank = 0;
    for (idx, &val) in eig.eigenvalues.iter().enumerate() {
        if largest == 0.0 || val.abs() <= cutoff {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(idx);
        out.ger(1.0 / val, &v, &v, 1.0);
    }
    Ok(PseudoInverse {
        matrix: symmetrize(&out),
        rank,
    })
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vector {
    if m.nrows() == 0 {
        return Vector::zeros(0);
    }
    let mut vals: alloc::vec::Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Vector::from_vec(vals)
}

/// Smallest eigenvalue of a symmetric matrix (`NaN` for an empty matrix).
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    symmetric_eigenvalues(m).iter().copied().next().unwrap_or(f64::NAN)
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn solve_spd(m: &Matrix, rhs: &Matrix) -> Option<Matrix> {
    let chol = symmetrize(m).cholesky()?;
    Some(chol.solve(rhs))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(m: &Matrix) -> Option<Matrix> {
    let chol = symmetrize(m).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_invertible_matrix_is_inverse() {
        let m = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let p = pinv_symmetric(&m).unwrap();
        assert_eq!(p.rank, 3);
        let id = &m * &p.matrix;
        assert!(max_abs_diff(&id, &Matrix::identity(3, 3)) < 1e-12);
    }

    #[test]
    fn pinv_drops_duplicated_direction() {
        // Two identical columns: ZᵀZ has rank 2 out of 3.
        let z = Matrix::from_row_slice(4, 3, &[1.0, 1.0, 0.3, 1.0, 1.0, -1.2, 1.0, 1.0, 2.0, 1.0, 1.0, 0.1]);
        let ztz = z.transpose() * &z;
        let p = pinv_symmetric(&ztz).unwrap();
        assert_eq!(p.rank, 2);
        // Penrose conditions A A⁺ A = A and A⁺ A A⁺ = A⁺.
        let a = &ztz;
        assert!(max_abs_diff(&(a * &p.matrix * a), a) < 1e-10);
        assert!(max_abs_diff(&(&p.matrix * a * &p.matrix), &p.matrix) < 1e-10);
    }

    #[test]
    fn zero_matrix_has_zero_pinv() {
        let p = pinv_symmetric(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p.rank, 0);
        assert_eq!(p.matrix, Matrix::zeros(2, 2));
    }

    #[test]
    fn eigenvalues_sorted() {
        let m = Matrix::from_diagonal(&Vector::from_vec(alloc::vec![3.0, -1.0, 2.0]));
        let e = symmetric_eigenvalues(&m);
        assert_eq!(e.as_slice(), &[-1.0, 2.0, 3.0]);
        assert_eq!(min_eigenvalue(&m), -1.0);
    }
}
