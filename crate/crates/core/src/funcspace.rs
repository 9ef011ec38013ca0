//! Functions on `[0, 1]`: quadrature grids, sampled outcome functions and
//! discretely observed functions.
//!
//! Every integral in the crate goes through [`Grid::integrate`], a Riemann sum
//! `h · Σ_g f(t_g)` over an equally spaced grid strictly inside `(0, 1)`, so the
//! discretization error is the same for the simulator, the estimator and the
//! test statistic.

use crate::basis::Basis;
use crate::{Error, Matrix, Result};
use alloc::format;
use alloc::vec::Vec;

/// Tolerance on the spacing of a grid.
const SPACING_TOL: f64 = 1e-12;

/// Observations closer than this in `y` at the same abscissa are merged.
pub const DUPLICATE_Y_TOL: f64 = 1e-9;

/// Equally spaced quadrature nodes inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    step: f64,
}

impl Grid {
    /// The `size` nodes `g / (size + 1)`, `g = 1..=size`, with step
    /// `1 / (size + 1)`. `Grid::interior(199)` is `0.005, 0.010, …, 0.995`.
    pub fn interior(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Invalid(format!("grid needs at least 2 points, got {size}")));
        }
        let denom = (size + 1) as f64;
        let points = (1..=size).map(|g| g as f64 / denom).collect();
        Ok(Self {
            points,
            step: 1.0 / denom,
        })
    }

    /// Validates an explicit list of nodes.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        for &p in &points {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain {
                    what: "grid point",
                    value: p,
                    domain: "(0, 1)",
                });
            }
        }
        let step = points[1] - points[0];
        if step <= 0.0 {
            return Err(Error::Invalid("grid points must be strictly increasing".into()));
        }
        for w in points.windows(2) {
            if ((w[1] - w[0]) - step).abs() > SPACING_TOL {
                return Err(Error::Invalid(format!(
                    "grid spacing {} differs from {step}",
                    w[1] - w[0]
                )));
            }
        }
        Ok(Self { points, step })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Quadrature weight `h`.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// `h · Σ_g f_g`, summed left to right.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len())?;
        Ok(self.step * f.iter().sum::<f64>())
    }

    /// Quadrature weights restricted to `[a, b]`: `h` for nodes strictly
    /// inside, `h / 2` for a node sitting on an endpoint, `0` outside. The
    /// half weights make the restriction additive over adjacent intervals.
    pub fn interval_weights(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        check_interval(a, b)?;
        let tol = SPACING_TOL;
        Ok(self
            .points
            .iter()
            .map(|&t| {
                if t < a - tol || t > b + tol {
                    0.0
                } else if (t - a).abs() <= tol || (t - b).abs() <= tol {
                    0.5 * self.step
                } else {
                    self.step
                }
            })
            .collect())
    }

    /// Index of the node equal to `s` (within `1e-12`), if any.
    pub fn index_of(&self, s: f64) -> Option<usize> {
        let idx = self.points.partition_point(|&p| p < s - SPACING_TOL);
        (idx < self.points.len() && (self.points[idx] - s).abs() <= SPACING_TOL).then_some(idx)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.points.len() {
            return Err(Error::Dimension(format!(
                "function has {len} values but the grid has {} points",
                self.points.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
        return Err(Error::Invalid(format!(
            "interval [{a}, {b}] is not a non-degenerate sub-interval of [0, 1]"
        )));
    }
    Ok(())
}

/// `h · Σ f`.
pub fn quadrature(f: &[f64], grid: &Grid) -> Result<f64> {
    grid.integrate(f)
}

/// `n` outcome functions sampled on a shared grid (row `i` is `q_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: Grid,
    values: Matrix,
}

impl FunctionalSample {
    pub fn new(grid: Grid, values: Matrix) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::Invalid("a functional sample needs at least one unit".into()));
        }
        grid.check_len(values.ncols())?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let n = values.nrows();
            return Err(Error::Invalid(format!(
                "non-finite value for unit {} at grid index {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `n × G` matrix of values.
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// The cross-section `(q_1(s), …, q_n(s))`. Values between nodes are
    /// linearly interpolated; outside the grid the nearest node is used.
    pub fn at(&self, s: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain {
                what: "s",
                value: s,
                domain: "[0, 1]",
            });
        }
        if let Some(g) = self.grid.index_of(s) {
            return Ok(self.values.column(g).iter().copied().collect());
        }
        let pts = self.grid.points();
        let last = pts.len() - 1;
        if s <= pts[0] {
            return Ok(self.values.column(0).iter().copied().collect());
        }
        if s >= pts[last] {
            return Ok(self.values.column(last).iter().copied().collect());
        }
        let hi = pts.partition_point(|&p| p <= s);
        let lo = hi - 1;
        let w = (pts[hi] - s) / (pts[hi] - pts[lo]);
        Ok(self
            .values
            .column(lo)
            .iter()
            .zip(self.values.column(hi).iter())
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect())
    }
}

/// Discretely observed functions: unit `i` has pairs `(s_ij, y_ij)` sorted by
/// `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFunctionObservations {
    units: Vec<Vec<(f64, f64)>>,
}

impl DiscreteFunctionObservations {
    /// Sorts each unit by abscissa and merges repeated abscissae whose values
    /// agree within [`DUPLICATE_Y_TOL`]. Repeated abscissae with different
    /// values are rejected.
    pub fn new(units: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Invalid("no units observed".into()));
        }
        let mut cleaned = Vec::with_capacity(units.len());
        for (unit, mut pts) in units.into_iter().enumerate() {
            if pts.is_empty() {
                return Err(Error::Invalid(format!("unit {unit} has no observations")));
            }
            for &(s, y) in &pts {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::Domain {
                        what: "observation abscissa",
                        value: s,
                        domain: "[0, 1]",
                    });
                }
                if !y.is_finite() {
                    return Err(Error::Invalid(format!("unit {unit}: non-finite value at s = {s}")));
                }
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
            for (s, y) in pts {
                match merged.last() {
                    Some(&(ps, py)) if ps == s => {
                        if (py - y).abs() > DUPLICATE_Y_TOL {
                            return Err(Error::DuplicateAbscissa { unit, s });
                        }
                    }
                    _ => merged.push((s, y)),
                }
            }
            cleaned.push(merged);
        }
        Ok(Self { units: cleaned })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit(&self, i: usize) -> &[(f64, f64)] {
        &self.units[i]
    }

    pub fn units(&self) -> &[Vec<(f64, f64)>] {
        &self.units
    }

    /// Largest gap between consecutive abscissae of any unit, counting the
    /// gaps to the endpoints 0 and 1.
    pub fn max_gap(&self) -> f64 {
        self.units
            .iter()
            .map(|pts| {
                let mut gap = pts[0].0.max(1.0 - pts[pts.len() - 1].0);
                for w in pts.windows(2) {
                    gap = gap.max(w[1].0 - w[0].0);
                }
                gap
            })
            .fold(0.0, f64::max)
    }
}

/// Piecewise-linear interpolation of unit `unit` at `s`, extended by the first
/// and last observed values outside the observed range.
pub fn interpolate(obs: &DiscreteFunctionObservations, unit: usize, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain {
            what: "s",
            value: s,
            domain: "[0, 1]",
        });
    }
    let pts = obs
        .units
        .get(unit)
        .ok_or_else(|| Error::Invalid(format!("unit {unit} out of range")))?;
    Ok(interpolate_sorted(pts, s))
}

pub(crate) fn interpolate_sorted(pts: &[(f64, f64)], s: f64) -> f64 {
    let m = pts.len();
    if s <= pts[0].0 {
        return pts[0].1;
    }
    if s >= pts[m - 1].0 {
        return pts[m - 1].1;
    }
    let hi = pts.partition_point(|p| p.0 <= s);
    let (s_lo, y_lo) = pts[hi - 1];
    let (s_hi, y_hi) = pts[hi];
    if s == s_lo {
        return y_lo;
    }
    let w = (s_hi - s) / (s_hi - s_lo);
    w * y_lo + (1.0 - w) * y_hi
}

/// Interpolates every unit onto `grid`.
pub fn interpolate_sample(obs: &DiscreteFunctionObservations, grid: &Grid) -> Result<FunctionalSample> {
    let n = obs.n_units();
    let values = Matrix::from_fn(n, grid.len(), |i, g| interpolate_sorted(&obs.units[i], grid.points()[g]));
    FunctionalSample::new(grid.clone(), values)
}

/// `r_ik = ∫ q_i φ_k`, an `n × K` matrix.
pub fn basis_scores<B: Basis + ?Sized>(sample: &FunctionalSample, basis: &B) -> Result<Matrix> {
    let design = basis.design_matrix(sample.grid())?;
    Ok(sample.values() * design * sample.grid().step())
}

/// `∫ (a − b)²`, the squared 2-Wasserstein distance when `a` and `b` are
/// quantile functions.
pub fn wasserstein2_sq(a: &[f64], b: &[f64], grid: &Grid) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "quantile functions of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    grid.integrate(&sq)
}
