//! Basis systems on `[0, 1]`.

use crate::funcspace::Grid;
use crate::linalg;
use crate::{Error, Matrix, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// A finite system of functions `φ_1, …, φ_K` on `[0, 1]`.
///
/// Only [`dim`](Basis::dim) and [`eval_into`](Basis::eval_into) are required;
/// Gram matrices and projections are computed with the grid quadrature.
pub trait Basis {
    fn dim(&self) -> usize;

    /// Writes `(φ_1(t), …, φ_K(t))` into `out`.
    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()>;

    fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// `φ_K(t)ᵀ c`.
    fn combine(&self, coefs: &[f64], t: f64) -> Result<f64> {
        if coefs.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a basis of dimension {}",
                coefs.len(),
                self.dim()
            )));
        }
        Ok(self.eval(t)?.iter().zip(coefs).map(|(p, c)| p * c).sum())
    }

    /// `len(points) × K` matrix with rows `φ_K(t)ᵀ`.
    fn eval_matrix(&self, points: &[f64]) -> Result<Matrix> {
        let k = self.dim();
        let mut m = Matrix::zeros(points.len(), k);
        let mut buf = vec![0.0; k];
        for (g, &t) in points.iter().enumerate() {
            self.eval_into(t, &mut buf)?;
            for (j, v) in buf.iter().enumerate() {
                m[(g, j)] = *v;
            }
        }
        Ok(m)
    }

    /// Basis values at the grid nodes (`G × K`).
    fn design_matrix(&self, grid: &Grid) -> Result<Matrix> {
        self.eval_matrix(grid.points())
    }

    /// `∫ φ_K φ_Kᵀ` over `[0, 1]`.
    fn gram_matrix(&self, grid: &Grid) -> Result<Matrix> {
        let phi = self.design_matrix(grid)?;
        Ok(linalg::symmetrize(&(phi.transpose() * &phi * grid.step())))
    }

    /// `∫_a^b φ_K φ_Kᵀ`, using only grid nodes in `[a, b]`.
    fn gram_matrix_on(&self, a: f64, b: f64, grid: &Grid) -> Result<Matrix> {
        let weights = grid.interval_weights(a, b)?;
        let phi = self.design_matrix(grid)?;
        let mut weighted = phi.clone();
        for (g, w) in weights.iter().enumerate() {
            weighted.row_mut(g).scale_mut(*w);
        }
        Ok(linalg::symmetrize(&(phi.transpose() * weighted)))
    }

    /// Least-squares coefficients of grid values `f` in the span of the basis.
    fn project(&self, f: &[f64], grid: &Grid) -> Result<Vec<f64>> {
        grid.check_len(f.len())?;
        let phi = self.design_matrix(grid)?;
        let gram = phi.transpose() * &phi * grid.step();
        let rhs = phi.transpose() * crate::Vector::from_column_slice(f) * grid.step();
        let rhs = Matrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        let sol = linalg::solve_spd(&gram, &rhs)
            .ok_or_else(|| Error::Singular("basis Gram matrix is not positive definite on this grid".into()))?;
        Ok(sol.column(0).iter().copied().collect())
    }
}

/// Clamped B-spline basis on `[0, 1]`.
///
/// The knot vector repeats 0 and 1 `degree + 1` times around the inner knots,
/// giving `K = #inner + degree + 1` functions that are nonnegative, sum to one
/// and satisfy `φ_1(0) = φ_K(1) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    inner: Vec<f64>,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(degree: usize, inner_knots: Vec<f64>) -> Result<Self> {
        for &k in &inner_knots {
            if !(k > 0.0 && k < 1.0) {
                return Err(Error::Domain {
                    what: "inner knot",
                    value: k,
                    domain: "(0, 1)",
                });
            }
        }
        if inner_knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("inner knots must be strictly increasing".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend_from_slice(&inner_knots);
        knots.extend(core::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            inner: inner_knots,
            knots,
        })
    }

    /// `n_inner` equally spaced inner knots `j / (n_inner + 1)`.
    pub fn uniform(degree: usize, n_inner: usize) -> Result<Self> {
        let denom = (n_inner + 1) as f64;
        Self::new(degree, (1..=n_inner).map(|j| j as f64 / denom).collect())
    }

    /// Cubic basis with equally spaced inner knots.
    pub fn cubic(n_inner: usize) -> Result<Self> {
        Self::uniform(3, n_inner)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn inner_knots(&self) -> &[f64] {
        &self.inner
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn span(&self, t: f64) -> usize {
        let k = self.dim();
        let idx = self.knots.partition_point(|&u| u <= t);
        (idx - 1).clamp(self.degree, k - 1)
    }
}

impl Basis for BSplineBasis {
    fn dim(&self) -> usize {
        self.inner.len() + self.degree + 1
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: "[0, 1]",
            });
        }
        if out.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "output buffer of length {} for a basis of dimension {}",
                out.len(),
                self.dim()
            )));
        }
        out.fill(0.0);
        let p = self.degree;
        let i = self.span(t);
        let u = &self.knots;
        // Triangular de Boor scheme for the p + 1 functions alive on span i.
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[i - p..=i].copy_from_slice(&n);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_matches_knot_count() {
        assert_eq!(BSplineBasis::cubic(2).unwrap().dim(), 6);
        assert_eq!(BSplineBasis::cubic(3).unwrap().dim(), 7);
        assert_eq!(BSplineBasis::uniform(1, 0).unwrap().dim(), 2);
        assert_eq!(BSplineBasis::cubic(2).unwrap().knots().len(), 10);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(BSplineBasis::new(3, vec![0.5, 0.5]).is_err());
        assert!(BSplineBasis::new(3, vec![0.6, 0.4]).is_err());
        assert!(BSplineBasis::new(3, vec![0.0]).is_err());
        assert!(BSplineBasis::new(3, vec![1.0]).is_err());
    }

    #[test]
    fn endpoints_are_clamped() {
        let b = BSplineBasis::cubic(2).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.eval(1.0).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(b.eval(-0.01).is_err());
        assert!(b.eval(1.01).is_err());
    }

    #[test]
    fn values_at_inner_knot() {
        // Cubic with knots {1/3, 2/3}: at t = 1/3 only three functions are
        // nonzero, with the classical values 1/4, 7/12, 1/6.
        let b = BSplineBasis::cubic(2).unwrap();
        let v = b.eval(1.0 / 3.0).unwrap();
        let expected = [0.0, 0.25, 7.0 / 12.0, 1.0 / 6.0, 0.0, 0.0];
        for (a, e) in v.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{v:?}");
        }
    }

    #[test]
    fn gram_matrix_properties() {
        let g = Grid::interior(199).unwrap();
        let b = BSplineBasis::cubic(2).unwrap();
        let gram = b.gram_matrix(&g).unwrap();
        assert!(gram.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(linalg::max_abs_diff(&gram, &gram.transpose()) == 0.0);
        assert!((gram.sum() - 0.995).abs() < 1e-12);
        let eig = linalg::symmetric_eigenvalues(&gram);
        assert!(eig[0] > 0.0 && eig[eig.len() - 1] <= 1.0);
    }

    #[test]
    fn interval_gram_examples() {
        let g = Grid::interior(199).unwrap();
        let b = BSplineBasis::cubic(2).unwrap();
        let full = b.gram_matrix(&g).unwrap();
        assert!(linalg::max_abs_diff(&b.gram_matrix_on(0.0, 1.0, &g).unwrap(), &full) < 1e-15);
        let halves = b.gram_matrix_on(0.0, 0.5, &g).unwrap() + b.gram_matrix_on(0.5, 1.0, &g).unwrap();
        assert!(linalg::max_abs_diff(&halves, &full) < 1e-10);
        let inner = b.gram_matrix_on(0.1, 0.9, &g).unwrap();
        assert!(linalg::min_eigenvalue(&inner) > 0.0);
        assert!(b.gram_matrix_on(0.6, 0.6, &g).is_err());
    }

    #[test]
    fn projection_examples() {
        let g = Grid::interior(199).unwrap();
        let b = BSplineBasis::cubic(2).unwrap();
        let phi = b.design_matrix(&g).unwrap();
        let f: Vec<f64> = phi.column(1).iter().copied().collect();
        let c = b.project(&f, &g).unwrap();
        for (k, v) in c.iter().enumerate() {
            let e = if k == 1 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-8);
        }
        let c = b.project(&vec![1.0; g.len()], &g).unwrap();
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-8));
        let c = b.project(g.points(), &g).unwrap();
        for &t in g.points() {
            assert!((b.combine(&c, t).unwrap() - t).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_needs_enough_nodes() {
        // Two nodes cannot identify six coefficients.
        let g = Grid::interior(2).unwrap();
        let b = BSplineBasis::cubic(2).unwrap();
        assert!(matches!(b.project(&[1.0, 2.0], &g), Err(Error::Singular(_))));
    }
}
