//! Data generation for the functional SAR model.
//!
//! The model in stacked form is `Q = 𝒯Q + Xβ + ℰ` with
//! `(𝒯H)(s) = W ∫ H(t) α(t, s) dt`. On a grid, `𝒯H = W · H · A · h` where
//! `A[g, g'] = α(t_g, t_g')`, and the solution is obtained by iterating
//! `Q ← U + 𝒯Q` from `Q = U = Xβ + ℰ` (partial sums of the Neumann series).

use crate::basis::Basis;
use crate::funcspace::{interpolate_sorted, DiscreteFunctionObservations, FunctionalSample, Grid};
use crate::rng::{stream_rng, Stream};
use crate::spatial::{completeness_check, CompletenessReport, SpatialWeights};
use crate::{Error, Matrix, Result};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use rand::Rng;
use rand_distr::StandardNormal;

/// Standard deviation of the Gaussian kernel.
pub const GAUSSIAN_KERNEL_SD: f64 = 0.7;

/// Spatial interaction kernel `α(t, s)`.
#[derive(Clone)]
pub enum KernelSpec {
    Zero,
    /// `(t + s) / 2`.
    Dgp1,
    /// Normal density with standard deviation 0.7 evaluated at `t − s`.
    Dgp2,
    /// `0.3 + 0.7 t sin(2π(t − s))`.
    Dgp3,
    /// `ϱ ×` the [`Dgp2`](KernelSpec::Dgp2) kernel.
    ScaledDgp2(f64),
    /// Values on `grid × grid`, rows indexed by `t`.
    Custom(Matrix),
    /// Arbitrary closed form.
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Dgp1 => f.write_str("Dgp1"),
            Self::Dgp2 => f.write_str("Dgp2"),
            Self::Dgp3 => f.write_str("Dgp3"),
            Self::ScaledDgp2(r) => write!(f, "ScaledDgp2({r})"),
            Self::Custom(m) => write!(f, "Custom({}x{})", m.nrows(), m.ncols()),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

fn gaussian_kernel(t: f64, s: f64) -> f64 {
    let d = (t - s) / GAUSSIAN_KERNEL_SD;
    libm::exp(-0.5 * d * d) / (GAUSSIAN_KERNEL_SD * libm::sqrt(2.0 * PI))
}

impl KernelSpec {
    /// `α(t, s)`, or `None` for grid-only kernels.
    pub fn value(&self, t: f64, s: f64) -> Option<f64> {
        Some(match self {
            Self::Zero => 0.0,
            Self::Dgp1 => 0.5 * (t + s),
            Self::Dgp2 => gaussian_kernel(t, s),
            Self::Dgp3 => 0.3 + 0.7 * t * libm::sin(2.0 * PI * (t - s)),
            Self::ScaledDgp2(r) => r * gaussian_kernel(t, s),
            Self::Function(f) => f(t, s),
            Self::Custom(_) => return None,
        })
    }

    /// `A[g, g'] = α(t_g, t_g')` on `grid × grid`.
    pub fn matrix(&self, grid: &Grid) -> Result<Matrix> {
        let g = grid.len();
        if let Self::Custom(m) = self {
            if m.shape() != (g, g) {
                return Err(Error::Dimension(format!(
                    "custom kernel is {}x{} but the grid has {g} points",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("custom kernel has non-finite values".into()));
            }
            return Ok(m.clone());
        }
        if let Self::ScaledDgp2(r) = self {
            if !(*r >= 0.0) {
                return Err(Error::Invalid(format!("kernel scale must be nonnegative, got {r}")));
            }
        }
        let pts = grid.points();
        let m = Matrix::from_fn(g, g, |a, b| self.value(pts[a], pts[b]).unwrap_or(0.0));
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("kernel has non-finite values on the grid".into()));
        }
        Ok(m)
    }
}

/// Kernel matrix of `α(t, s) = φ_K(t)ᵀ c(s)`, a kernel lying exactly in the
/// span of `basis` for every `s`.
pub fn span_kernel<B, F>(basis: &B, grid: &Grid, c: F) -> Result<Matrix>
where
    B: Basis + ?Sized,
    F: Fn(f64) -> Vec<f64>,
{
    let phi = basis.design_matrix(grid)?;
    let k = basis.dim();
    let mut coefs = Matrix::zeros(k, grid.len());
    for (g, &s) in grid.points().iter().enumerate() {
        let cs = c(s);
        if cs.len() != k {
            return Err(Error::Dimension(format!("{} kernel coefficients for a basis of dimension {k}", cs.len())));
        }
        coefs.column_mut(g).copy_from_slice(&cs);
    }
    Ok(phi * coefs)
}

/// One coefficient function `β_j(s)`.
#[derive(Clone)]
pub enum CoefFn {
    Constant(f64),
    /// `level + slope · ln(s + 1)`.
    Log { level: f64, slope: f64 },
    /// `exp(s) − shift`.
    Exp { shift: f64 },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CoefFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Log { level, slope } => write!(f, "Log {{ level: {level}, slope: {slope} }}"),
            Self::Exp { shift } => write!(f, "Exp {{ shift: {shift} }}"),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl CoefFn {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Log { level, slope } => level + slope * libm::log(s + 1.0),
            Self::Exp { shift } => libm::exp(s) - shift,
            Self::Function(f) => f(s),
        }
    }
}

/// Coefficient functions of the covariates (no intercept).
#[derive(Debug, Clone)]
pub struct CoefSpec {
    pub funcs: Vec<CoefFn>,
}

impl CoefSpec {
    /// Seven covariates: `1 + 1.2 ln(s + 1)` for the first three and
    /// `exp(s) − 0.4` for the other four.
    pub fn standard() -> Self {
        let mut funcs = vec![CoefFn::Log { level: 1.0, slope: 1.2 }; 3];
        funcs.extend(vec![CoefFn::Exp { shift: 0.4 }; 4]);
        Self { funcs }
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    /// `(β_1(s), …, β_d(s))`.
    pub fn values(&self, s: f64) -> Vec<f64> {
        self.funcs.iter().map(|f| f.value(s)).collect()
    }

    /// `d × G` matrix of coefficient values on the grid.
    pub fn grid_matrix(&self, grid: &Grid) -> Matrix {
        let pts = grid.points();
        Matrix::from_fn(self.funcs.len(), pts.len(), |j, g| self.funcs[j].value(pts[g]))
    }
}

/// Functional error `ε_i(s) = e_{1,i} + Σ_{j=1}^{J} s^{j/2} e_{2,i,j}` with
/// `e_1 ~ N(0, σ₁²)` and `e_2 ~ N(0, σ₂²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSpec {
    pub sigma1: f64,
    pub sigma2: f64,
    pub terms: usize,
}

impl Default for ErrorSpec {
    fn default() -> Self {
        Self {
            sigma1: 0.3,
            sigma2: 0.6,
            terms: 4,
        }
    }
}

impl ErrorSpec {
    pub fn zero() -> Self {
        Self {
            sigma1: 0.0,
            sigma2: 0.0,
            terms: 0,
        }
    }
}

/// Everything [`simulate`] needs besides the seed.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n: usize,
    pub lattice_rows: usize,
    pub lattice_cols: usize,
    pub kernel: KernelSpec,
    pub coefs: CoefSpec,
    pub errors: ErrorSpec,
    pub grid: Grid,
    pub tol: f64,
    pub max_iter: usize,
}

impl SimulationConfig {
    /// `n` units on a `⌈n/20⌉ × 40` lattice, seven standard covariates,
    /// default errors, 199-point grid, tolerance `1e-3`.
    pub fn standard(n: usize, kernel: KernelSpec) -> Result<Self> {
        Ok(Self {
            n,
            lattice_rows: n.div_ceil(20),
            lattice_cols: 40,
            kernel,
            coefs: CoefSpec::standard(),
            errors: ErrorSpec::default(),
            grid: Grid::interior(199)?,
            tol: 1e-3,
            max_iter: 10_000,
        })
    }
}

/// A simulated cross-section.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub q: FunctionalSample,
    /// `n × d` covariates (no intercept column).
    pub x: Matrix,
    pub errors: FunctionalSample,
    pub weights: SpatialWeights,
    /// Lattice cell of every unit.
    pub positions: Vec<(usize, usize)>,
    pub neumann_iters: usize,
    pub converged: bool,
    pub completeness: CompletenessReport,
}

impl SimulatedDataset {
    pub fn isolated_units(&self) -> usize {
        self.weights.isolated_count()
    }
}

/// Result of [`neumann_solve`].
#[derive(Debug, Clone)]
pub struct NeumannSolution {
    pub q: Matrix,
    /// Number of operator applications performed.
    pub iters: usize,
    pub converged: bool,
    /// Entrywise change of the last step.
    pub last_change: f64,
}

fn check_operator_dims(w: &SpatialWeights, alpha: &Matrix, h: &Matrix, grid: &Grid) -> Result<()> {
    let g = grid.len();
    if alpha.shape() != (g, g) {
        return Err(Error::Dimension(format!(
            "kernel is {}x{} but the grid has {g} points",
            alpha.nrows(),
            alpha.ncols()
        )));
    }
    if h.shape() != (w.n(), g) {
        return Err(Error::Dimension(format!(
            "functions are {}x{}, expected {}x{g}",
            h.nrows(),
            h.ncols(),
            w.n()
        )));
    }
    Ok(())
}

/// `(𝒯H)(s) = W ∫ H(t) α(t, s) dt` on the grid.
pub fn apply_operator(w: &SpatialWeights, alpha: &Matrix, h: &Matrix, grid: &Grid) -> Result<Matrix> {
    check_operator_dims(w, alpha, h, grid)?;
    w.lag(&(h * alpha * grid.step()))
}

/// Partial sums `Q⁽ᴸ⁾ = Σ_{ℓ≤L} 𝒯ˡU`, stopped once the largest entrywise
/// change drops below `tol`. Hitting `max_iter` returns `converged = false`.
pub fn neumann_solve(
    w: &SpatialWeights,
    alpha: &Matrix,
    u: &Matrix,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<NeumannSolution> {
    check_operator_dims(w, alpha, u, grid)?;
    if max_iter == 0 {
        return Err(Error::Invalid("max_iter must be positive".into()));
    }
    let kernel = alpha * grid.step();
    let (n, g) = u.shape();
    let mut q = u.clone();
    let mut integrated = Matrix::zeros(n, g);
    let mut iters = 0;
    let mut last_change = f64::INFINITY;
    while iters < max_iter {
        integrated.gemm(1.0, &q, &kernel, 0.0);
        iters += 1;
        // q_new = U + W · integrated, written in place column by column.
        let mut change = 0.0_f64;
        for c in 0..g {
            let src = integrated.column(c);
            for i in 0..n {
                let mut acc = u[(i, c)];
                for &(j, wij) in w.row(i) {
                    acc += wij * src[j];
                }
                let old = q[(i, c)];
                if !acc.is_finite() {
                    return Err(Error::Divergence { iters });
                }
                change = change.max((acc - old).abs());
                q[(i, c)] = acc;
            }
        }
        last_change = change;
        if change < tol {
            return Ok(NeumannSolution {
                q,
                iters,
                converged: true,
                last_change,
            });
        }
    }
    Ok(NeumannSolution {
        q,
        iters,
        converged: false,
        last_change,
    })
}

/// Largest `n · G` accepted by [`direct_solve_oracle`].
pub const DIRECT_SOLVE_MAX: usize = 20_000;

/// Solves the discretized system `(Id − 𝒯)Q = U` as one dense
/// `(nG) × (nG)` linear system.
pub fn direct_solve_oracle(w: &SpatialWeights, alpha: &Matrix, u: &Matrix, grid: &Grid) -> Result<Matrix> {
    check_operator_dims(w, alpha, u, grid)?;
    let (n, g) = u.shape();
    let size = n * g;
    if size > DIRECT_SOLVE_MAX {
        return Err(Error::Invalid(format!(
            "dense solve of size {size} exceeds the limit {DIRECT_SOLVE_MAX}"
        )));
    }
    let idx = |i: usize, k: usize| i * g + k;
    let h = grid.step();
    let mut sys = Matrix::identity(size, size);
    for (i, j, wij) in w.triplets() {
        for s in 0..g {
            for t in 0..g {
                sys[(idx(i, s), idx(j, t))] -= wij * h * alpha[(t, s)];
            }
        }
    }
    let mut rhs = crate::Vector::zeros(size);
    for i in 0..n {
        for k in 0..g {
            rhs[idx(i, k)] = u[(i, k)];
        }
    }
    let lu = sys.lu();
    let pivots = lu.u().diagonal().abs();
    if pivots.min() <= 1e-12 * pivots.max() {
        return Err(Error::Singular("discretized operator Id − 𝒯 is singular".into()));
    }
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("discretized operator Id − 𝒯 is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("discretized operator Id − 𝒯 is singular".into()));
    }
    Ok(Matrix::from_fn(n, g, |i, k| sol[idx(i, k)]))
}

/// Simulates one dataset. The lattice, covariates and errors use separate
/// random streams derived from `seed` (see [`crate::rng`]).
pub fn simulate(config: &SimulationConfig, seed: u64) -> Result<SimulatedDataset> {
    let n = config.n;
    let cells = config.lattice_rows * config.lattice_cols;
    if n == 0 {
        return Err(Error::Invalid("need at least one unit".into()));
    }
    if n > cells {
        return Err(Error::Invalid(format!(
            "{n} units do not fit on a {}x{} lattice",
            config.lattice_rows, config.lattice_cols
        )));
    }
    let grid = &config.grid;
    let g = grid.len();

    let mut rng = stream_rng(seed, Stream::Lattice);
    let positions: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, cells, n)
        .into_iter()
        .map(|c| (c / config.lattice_cols, c % config.lattice_cols))
        .collect();
    let weights = SpatialWeights::rook_lattice(config.lattice_rows, config.lattice_cols, &positions)?;

    let d = config.coefs.len();
    let mut rng = stream_rng(seed, Stream::Covariates);
    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }

    let spec = config.errors;
    let mut rng = stream_rng(seed, Stream::Errors);
    let powers: Vec<Vec<f64>> = (1..=spec.terms)
        .map(|j| grid.points().iter().map(|&s| libm::pow(s, j as f64 / 2.0)).collect())
        .collect();
    let mut errors = Matrix::zeros(n, g);
    let mut draws = vec![0.0; spec.terms];
    for i in 0..n {
        let e1 = spec.sigma1 * rng.sample::<f64, _>(StandardNormal);
        for d in draws.iter_mut() {
            *d = spec.sigma2 * rng.sample::<f64, _>(StandardNormal);
        }
        for k in 0..g {
            let mut v = e1;
            for (p, e2) in powers.iter().zip(&draws) {
                v += p[k] * e2;
            }
            errors[(i, k)] = v;
        }
    }

    let alpha = config.kernel.matrix(grid)?;
    let completeness = completeness_check(&weights, &alpha, grid)?;
    let u = &x * config.coefs.grid_matrix(grid) + &errors;
    let sol = neumann_solve(&weights, &alpha, &u, grid, config.tol, config.max_iter)?;

    Ok(SimulatedDataset {
        q: FunctionalSample::new(grid.clone(), sol.q)?,
        x,
        errors: FunctionalSample::new(grid.clone(), errors)?,
        weights,
        positions,
        neumann_iters: sol.iters,
        converged: sol.converged,
        completeness,
    })
}

/// `∂Q / ∂x_{unit, covariate}`: the Neumann series
/// `e_i β_j + 𝒯(e_i β_j) + 𝒯²(e_i β_j) + …`, summed until the increment is
/// below `tol`.
pub fn marginal_effect(
    w: &SpatialWeights,
    kernel: &KernelSpec,
    coefs: &CoefSpec,
    grid: &Grid,
    covariate: usize,
    unit: usize,
    tol: f64,
) -> Result<Matrix> {
    if covariate >= coefs.len() {
        return Err(Error::Invalid(format!("covariate {covariate} out of range")));
    }
    if unit >= w.n() {
        return Err(Error::Invalid(format!("unit {unit} out of range")));
    }
    let alpha = kernel.matrix(grid)?;
    let mut u = Matrix::zeros(w.n(), grid.len());
    for (k, &s) in grid.points().iter().enumerate() {
        u[(unit, k)] = coefs.funcs[covariate].value(s);
    }
    let sol = neumann_solve(w, &alpha, &u, grid, tol, 10_000)?;
    if !sol.converged {
        return Err(Error::Divergence { iters: sol.iters });
    }
    Ok(sol.q)
}

/// Reads each unit's function at the given abscissae by linear interpolation
/// between grid nodes (constant beyond the first and last node).
pub fn observe_at(q: &FunctionalSample, abscissae: &[Vec<f64>]) -> Result<DiscreteFunctionObservations> {
    if abscissae.len() != q.n_units() {
        return Err(Error::Dimension(format!(
            "abscissae for {} units, sample has {}",
            abscissae.len(),
            q.n_units()
        )));
    }
    let pts = q.grid().points();
    let units = abscissae
        .iter()
        .enumerate()
        .map(|(i, ss)| {
            let row: Vec<(f64, f64)> = pts.iter().enumerate().map(|(k, &t)| (t, q.values()[(i, k)])).collect();
            ss.iter().map(|&s| (s, interpolate_sorted(&row, s))).collect()
        })
        .collect();
    DiscreteFunctionObservations::new(units)
}

/// Draws `m` abscissae per unit uniformly on `[0, 1]` and observes `q` there.
pub fn sample_discrete(q: &FunctionalSample, m: usize, seed: u64) -> Result<DiscreteFunctionObservations> {
    if m == 0 {
        return Err(Error::Invalid("need at least one observation per unit".into()));
    }
    let mut rng = stream_rng(seed, Stream::Observations);
    let abscissae: Vec<Vec<f64>> = (0..q.n_units())
        .map(|_| {
            let mut s: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    observe_at(q, &abscissae)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::interpolate_sample;
    use crate::linalg::max_abs_diff;

    fn pair() -> SpatialWeights {
        SpatialWeights::rook_lattice(1, 2, &[(0, 0), (0, 1)]).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(KernelSpec::Dgp1.value(0.2, 0.4), Some(0.30000000000000004));
        assert!((KernelSpec::Dgp2.value(0.5, 0.5).unwrap() - 0.5699175434306182).abs() < 1e-15);
        assert!((KernelSpec::Dgp3.value(0.25, 0.0).unwrap() - (0.3 + 0.7 * 0.25)).abs() < 1e-15);
        assert_eq!(KernelSpec::ScaledDgp2(0.0).value(0.1, 0.9), Some(0.0));
        assert_eq!(KernelSpec::Custom(Matrix::zeros(2, 2)).value(0.1, 0.2), None);
        let g = Grid::interior(3).unwrap();
        assert!(KernelSpec::Custom(Matrix::zeros(2, 2)).matrix(&g).is_err());
        assert!(KernelSpec::ScaledDgp2(-1.0).matrix(&g).is_err());
    }

    #[test]
    fn standard_coefficients() {
        let c = CoefSpec::standard();
        assert_eq!(c.len(), 7);
        let v = c.values(0.5);
        assert!((v[0] - (1.0 + 1.2 * libm::log(1.5))).abs() < 1e-15);
        assert!((v[6] - (libm::exp(0.5) - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn operator_trivial_cases() {
        let g = Grid::interior(9).unwrap();
        let w = pair();
        let h = Matrix::from_fn(2, 9, |i, k| (i + k) as f64);
        let alpha = KernelSpec::Dgp1.matrix(&g).unwrap();
        assert_eq!(apply_operator(&w, &alpha, &Matrix::zeros(2, 9), &g).unwrap(), Matrix::zeros(2, 9));
        assert_eq!(apply_operator(&w, &Matrix::zeros(9, 9), &h, &g).unwrap(), Matrix::zeros(2, 9));
        let single = SpatialWeights::zeros(1);
        let h1 = Matrix::from_element(1, 9, 3.0);
        assert_eq!(apply_operator(&single, &alpha, &h1, &g).unwrap(), Matrix::zeros(1, 9));
        assert!(apply_operator(&w, &alpha, &h1, &g).is_err());
    }

    #[test]
    fn neumann_zero_kernel_is_one_step() {
        let g = Grid::interior(9).unwrap();
        let u = Matrix::from_fn(2, 9, |i, k| 1.0 + i as f64 * k as f64);
        let sol = neumann_solve(&pair(), &Matrix::zeros(9, 9), &u, &g, 1e-3, 100).unwrap();
        assert_eq!(sol.q, u);
        assert_eq!(sol.iters, 1);
        assert!(sol.converged);
    }

    /// Constant kernel c on [0, 1]²: the quadrature integrates a constant row
    /// to `c · G · h`, so the discrete contraction is `c' = c · G · h`.
    fn constant_pair_case(c: f64, g: &Grid) -> (Matrix, Matrix, f64) {
        let alpha = Matrix::from_element(g.len(), g.len(), c);
        let mut u = Matrix::zeros(2, g.len());
        u.row_mut(0).fill(1.0);
        u.row_mut(1).fill(2.0);
        (alpha, u, c * g.len() as f64 * g.step())
    }

    #[test]
    fn neumann_matches_two_unit_closed_form() {
        let g = Grid::interior(49).unwrap();
        let (alpha, u, c) = constant_pair_case(0.5, &g);
        // q1 = (u1 + c u2) / (1 − c²), q2 = (u2 + c u1) / (1 − c²)
        let q1 = (1.0 + c * 2.0) / (1.0 - c * c);
        let q2 = (2.0 + c * 1.0) / (1.0 - c * c);
        let sol = neumann_solve(&pair(), &alpha, &u, &g, 1e-12, 10_000).unwrap();
        assert!(sol.converged);
        for k in 0..g.len() {
            assert!((sol.q[(0, k)] - q1).abs() < 1e-10);
            assert!((sol.q[(1, k)] - q2).abs() < 1e-10);
        }
        let direct = direct_solve_oracle(&pair(), &alpha, &u, &g).unwrap();
        assert!(max_abs_diff(&direct, &sol.q) < 1e-10);
    }

    #[test]
    fn closed_form_with_exact_half() {
        // With G·h = 1 the discrete and continuous problems coincide.
        let g = Grid::from_points(vec![0.25, 0.5, 0.75]).unwrap();
        let alpha = Matrix::from_element(3, 3, 0.5 / (3.0 * g.step()));
        let mut u = Matrix::zeros(2, 3);
        u.row_mut(0).fill(1.0);
        u.row_mut(1).fill(2.0);
        let q = direct_solve_oracle(&pair(), &alpha, &u, &g).unwrap();
        for k in 0..3 {
            assert!((q[(0, k)] - 8.0 / 3.0).abs() < 1e-12);
            assert!((q[(1, k)] - 10.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_reports_non_convergence_and_divergence() {
        let g = Grid::interior(9).unwrap();
        let (alpha, u, _) = constant_pair_case(0.9, &g);
        let sol = neumann_solve(&pair(), &alpha, &u, &g, 1e-14, 3).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iters, 3);
        let (alpha, u, _) = constant_pair_case(1e150, &g);
        assert!(matches!(
            neumann_solve(&pair(), &alpha, &u, &g, 1e-3, 100),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn direct_solve_guard_and_zero_kernel() {
        let g = Grid::interior(9).unwrap();
        let u = Matrix::from_fn(2, 9, |i, k| (i * 3 + k) as f64);
        let q = direct_solve_oracle(&pair(), &Matrix::zeros(9, 9), &u, &g).unwrap();
        assert!(max_abs_diff(&q, &u) < 1e-15);
        let big = Grid::interior(201).unwrap();
        let w = SpatialWeights::zeros(100);
        assert!(direct_solve_oracle(&w, &Matrix::zeros(201, 201), &Matrix::zeros(100, 201), &big).is_err());
        // α ≡ 1/(G h) on a pair makes c' = 1, so Id − 𝒯 is singular.
        let alpha = Matrix::from_element(9, 9, 1.0 / (9.0 * g.step()));
        let mut u = Matrix::zeros(2, 9);
        u.row_mut(0).fill(1.0);
        assert!(direct_solve_oracle(&pair(), &alpha, &u, &g).is_err());
    }

    fn small_config(n: usize, kernel: KernelSpec) -> SimulationConfig {
        let mut c = SimulationConfig::standard(n, kernel).unwrap();
        c.lattice_rows = 4;
        c.lattice_cols = 10;
        c.grid = Grid::interior(49).unwrap();
        c
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = small_config(20, KernelSpec::Dgp1);
        let a = simulate(&cfg, 42).unwrap();
        let b = simulate(&cfg, 42).unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.x, b.x);
        assert_eq!(a.positions, b.positions);
        assert!(a.converged);
        let c = simulate(&cfg, 43).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn simulate_zero_kernel_no_noise_is_x_beta() {
        let mut cfg = small_config(20, KernelSpec::Zero);
        cfg.errors = ErrorSpec::zero();
        let d = simulate(&cfg, 3).unwrap();
        let xb = &d.x * cfg.coefs.grid_matrix(&cfg.grid);
        assert_eq!(d.q.values(), &xb);
        assert_eq!(d.neumann_iters, 1);
    }

    #[test]
    fn simulate_rejects_oversized_n() {
        let cfg = small_config(41, KernelSpec::Dgp1);
        assert!(simulate(&cfg, 1).is_err());
    }

    #[test]
    fn marginal_effect_zero_kernel() {
        let g = Grid::interior(19).unwrap();
        let w = SpatialWeights::rook_lattice(1, 3, &[(0, 0), (0, 1), (0, 2)]).unwrap();
        let coefs = CoefSpec::standard();
        let me = marginal_effect(&w, &KernelSpec::Zero, &coefs, &g, 4, 1, 1e-10).unwrap();
        for (k, &s) in g.points().iter().enumerate() {
            assert_eq!(me[(1, k)], coefs.funcs[4].value(s));
            assert_eq!(me[(0, k)], 0.0);
            assert_eq!(me[(2, k)], 0.0);
        }
    }

    #[test]
    fn marginal_effect_geometric_series() {
        // Constant kernel c, constant β = 1: effect on own unit 1/(1−c'²),
        // on the neighbor c'/(1−c'²).
        let g = Grid::interior(19).unwrap();
        let c = 0.4;
        let kernel = KernelSpec::Function(Arc::new(move |_, _| c));
        let coefs = CoefSpec {
            funcs: vec![CoefFn::Constant(1.0)],
        };
        let me = marginal_effect(&pair(), &kernel, &coefs, &g, 0, 0, 1e-14).unwrap();
        let cd = c * g.len() as f64 * g.step();
        for k in 0..g.len() {
            assert!((me[(0, k)] - 1.0 / (1.0 - cd * cd)).abs() < 1e-12);
            assert!((me[(1, k)] - cd / (1.0 - cd * cd)).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_sampling() {
        let cfg = small_config(10, KernelSpec::Dgp2);
        let d = simulate(&cfg, 9).unwrap();
        let a = sample_discrete(&d.q, 15, 5).unwrap();
        let b = sample_discrete(&d.q, 15, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.units().iter().all(|u| u.len() == 15));
        assert!(sample_discrete(&d.q, 0, 5).is_err());

        let grid_pts: Vec<Vec<f64>> = vec![cfg.grid.points().to_vec(); 10];
        let exact = observe_at(&d.q, &grid_pts).unwrap();
        let back = interpolate_sample(&exact, &cfg.grid).unwrap();
        assert_eq!(back.values(), d.q.values());
    }
}
