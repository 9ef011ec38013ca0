//! Penalized two-stage least squares for the functional SAR model.
//!
//! Expanding `α(·, s)` in a basis turns the model at a fixed `s` into a linear
//! regression with `K` endogenous regressors `r̄_i = W r_i`, where
//! `r_ik = ∫ q_i φ_k`. With instruments `Z = [Z₁ | X]`, `M_z = Z(ZᵀZ)⁻Zᵀ`,
//! `S = M_z R̄ [R̄ᵀM_zR̄]⁻ R̄ᵀM_z` and `R̄ₓ = (I − M_x)R̄`:
//!
//! ```text
//! β̂(s) = [Xᵀ(I − S)X]⁻¹ Xᵀ(I − S)Q(s)
//! θ̂(s) = [R̄ₓᵀM_zR̄ₓ + λnD]⁻¹ R̄ₓᵀM_zQ(s)
//! α̂(t, s) = φ_K(t)ᵀθ̂(s)
//! ```
//!
//! `M_z` and `M_x` are never formed. Every product `AᵀM_zB` is evaluated as
//! `(ZᵀA)ᵀ(ZᵀZ)⁺(ZᵀB)`, and only `n × K` or `n × d` matrices are stored, so
//! the cost of assembling a design is `O(n p²)` for `p` instrument columns.
//! Everything that does not depend on `s` is cached in [`DesignSet`].

use crate::basis::{BSplineBasis, Basis};
use crate::funcspace::{basis_scores, interpolate_sample, DiscreteFunctionObservations, FunctionalSample, Grid};
use crate::linalg::{self, pinv_symmetric};
use crate::spatial::{build_instruments, SpatialWeights};
use crate::{Error, Matrix, Result, Vector};
use alloc::format;
use alloc::vec::Vec;

/// How the design is assembled from raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    /// Highest power of `W` applied to `[1 | X]` when building instruments.
    pub max_iv_order: usize,
    /// Prepend a column of ones to the covariates.
    pub add_intercept: bool,
    /// User-supplied instruments appended to `Z₁`.
    pub extra_instruments: Option<Matrix>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            max_iv_order: 2,
            add_intercept: true,
            extra_instruments: None,
        }
    }
}

/// Ridge-type penalty `λD`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub d: Matrix,
    pub lambda: f64,
}

impl PenaltySpec {
    /// `D = I_K` with the given `λ`.
    pub fn ridge(k: usize, lambda: f64) -> Result<Self> {
        Self::new(Matrix::identity(k, k), lambda)
    }

    /// `D = I_K`, `λ = λ_c · n^{-3/5}`.
    pub fn ridge_rate(k: usize, lambda_c: f64, n: usize) -> Result<Self> {
        Self::ridge(k, lambda_rate(lambda_c, n))
    }

    pub fn new(d: Matrix, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("penalty λ must be finite and nonnegative, got {lambda}")));
        }
        if !d.is_square() {
            return Err(Error::Dimension(format!("penalty matrix is {}x{}", d.nrows(), d.ncols())));
        }
        let scale = d.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        if linalg::max_abs_diff(&d, &d.transpose()) > 1e-12 * scale {
            return Err(Error::Invalid("penalty matrix must be symmetric".into()));
        }
        if d.nrows() > 0 && linalg::min_eigenvalue(&d) < -1e-12 * scale {
            return Err(Error::Invalid("penalty matrix must be positive semidefinite".into()));
        }
        Ok(Self { d, lambda })
    }
}

/// `λ_c · n^{-3/5}`.
pub fn lambda_rate(lambda_c: f64, n: usize) -> f64 {
    lambda_c * libm::pow(n as f64, -0.6)
}

/// Scalar summaries of an assembled design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDiagnostics {
    pub n: usize,
    /// Columns of `X`, including the intercept.
    pub n_covariates: usize,
    /// Columns of `Z₁` (excluded instruments).
    pub n_instruments: usize,
    pub basis_dim: usize,
    /// Numerical rank of `ZᵀZ`.
    pub instrument_rank: usize,
    /// `L ≥ K`.
    pub order_condition: bool,
    /// `R̄ = 0`, so `α` is not identified.
    pub rbar_is_zero: bool,
    /// Smallest eigenvalue of `R̄ₓᵀM_zR̄ₓ / n`, a gauge of identification
    /// strength.
    pub identification_min_eig: f64,
}

/// Design objects for one dataset; everything is independent of `s`.
#[derive(Debug, Clone)]
pub struct DesignSet<B: Basis = BSplineBasis> {
    q: FunctionalSample,
    basis: B,
    x: Matrix,
    z: Matrix,
    rbar: Matrix,
    rbar_x: Matrix,
    zz_pinv: Matrix,
    /// `(I − S)X`, `n × d`.
    resid_x: Matrix,
    /// `Xᵀ(I − S)X`.
    x_bread: Matrix,
    /// `M_z R̄ₓ`, `n × K`.
    mz_rbar_x: Matrix,
    /// `Zᵀ R̄ₓ`, `p × K`.
    zt_rbar_x: Matrix,
    /// `R̄ₓᵀ M_z R̄ₓ`.
    sigma_r: Matrix,
    diagnostics: DesignDiagnostics,
}

/// Builds the design: `R̄ = W · basis_scores(Q)`, `Z = [instruments | X]`,
/// plus all cached cross products.
pub fn assemble_design<B: Basis + Clone>(
    q: &FunctionalSample,
    w: &SpatialWeights,
    x_raw: &Matrix,
    basis: &B,
    config: &DesignConfig,
) -> Result<DesignSet<B>> {
    let n = q.n_units();
    if w.n() != n {
        return Err(Error::Dimension(format!("weight matrix is {0}x{0} for {n} units", w.n())));
    }
    if x_raw.nrows() != n && x_raw.ncols() > 0 {
        return Err(Error::Dimension(format!("{} covariate rows for {n} units", x_raw.nrows())));
    }
    let x_raw = if x_raw.ncols() == 0 {
        Matrix::zeros(n, 0)
    } else {
        x_raw.clone()
    };
    let mut z1 = build_instruments(w, &x_raw, config.max_iv_order)?;
    if let Some(extra) = &config.extra_instruments {
        if extra.nrows() != n {
            return Err(Error::Dimension(format!("{} extra instrument rows for {n} units", extra.nrows())));
        }
        let l = z1.ncols();
        z1 = z1.resize_horizontally(l + extra.ncols(), 0.0);
        z1.view_mut((0, l), (n, extra.ncols())).copy_from(extra);
    }
    let x = if config.add_intercept {
        let mut x = Matrix::from_element(n, x_raw.ncols() + 1, 1.0);
        x.view_mut((0, 1), (n, x_raw.ncols())).copy_from(&x_raw);
        x
    } else {
        x_raw
    };
    let d = x.ncols();
    if d == 0 {
        return Err(Error::Invalid("the model needs at least one covariate or an intercept".into()));
    }
    let l = z1.ncols();
    let p = l + d;
    if p > n {
        return Err(Error::Invalid(format!("{p} instrument columns exceed the {n} units")));
    }
    let mut z = z1.resize_horizontally(p, 0.0);
    z.view_mut((0, l), (n, d)).copy_from(&x);

    let r = basis_scores(q, basis)?;
    let rbar = w.lag(&r)?;
    let k = rbar.ncols();

    let ztz = z.transpose() * &z;
    let zz = pinv_symmetric(&ztz)?;
    let zz_pinv = zz.matrix;

    // M_x R̄ = X (XᵀX)⁻¹ XᵀR̄
    let xtx = x.transpose() * &x;
    let xt_rbar = x.transpose() * &rbar;
    let coef = linalg::solve_spd(&xtx, &xt_rbar).ok_or_else(|| Error::CollinearCovariates {
        covariates: weak_directions(&xtx),
    })?;
    let rbar_x = &rbar - &x * coef;

    // S-related pieces.
    let zt_rbar = z.transpose() * &rbar;
    let zt_x = z.transpose() * &x;
    let zz_zt_rbar = &zz_pinv * &zt_rbar;
    let mz_rbar = &z * &zz_zt_rbar;
    let rbar_mz_rbar = linalg::symmetrize(&(zt_rbar.transpose() * &zz_zt_rbar));
    let p_pinv = pinv_symmetric(&rbar_mz_rbar)?.matrix;
    let rbar_mz_x = zz_zt_rbar.transpose() * &zt_x;
    let resid_x = &x - &mz_rbar * (&p_pinv * rbar_mz_x);
    let x_bread = linalg::symmetrize(&(x.transpose() * &resid_x));

    let zt_rbar_x = z.transpose() * &rbar_x;
    let zz_zt_rbar_x = &zz_pinv * &zt_rbar_x;
    let mz_rbar_x = &z * &zz_zt_rbar_x;
    let sigma_r = linalg::symmetrize(&(zt_rbar_x.transpose() * &zz_zt_rbar_x));

    let diagnostics = DesignDiagnostics {
        n,
        n_covariates: d,
        n_instruments: l,
        basis_dim: k,
        instrument_rank: zz.rank,
        order_condition: l >= k,
        rbar_is_zero: rbar.iter().all(|&v| v == 0.0),
        identification_min_eig: linalg::min_eigenvalue(&(&sigma_r / n as f64)),
    };

    Ok(DesignSet {
        q: q.clone(),
        basis: basis.clone(),
        x,
        z,
        rbar,
        rbar_x,
        zz_pinv,
        resid_x,
        x_bread,
        mz_rbar_x,
        zt_rbar_x,
        sigma_r,
        diagnostics,
    })
}

/// Indices carrying most of the weight of the near-null eigenvectors.
fn weak_directions(m: &Matrix) -> Vec<usize> {
    let eig = linalg::symmetrize(m).symmetric_eigen();
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut out = Vec::new();
    for (idx, &val) in eig.eigenvalues.iter().enumerate() {
        if val.abs() <= 1e-10 * largest.max(f64::MIN_POSITIVE) {
            for (j, c) in eig.eigenvectors.column(idx).iter().enumerate() {
                if c.abs() > 0.1 && !out.contains(&j) {
                    out.push(j);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

impl<B: Basis> DesignSet<B> {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> &FunctionalSample {
        &self.q
    }

    pub fn grid(&self) -> &Grid {
        self.q.grid()
    }

    pub fn basis(&self) -> &B {
        &self.basis
    }

    /// Covariates including the intercept column (if added).
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    /// `[Z₁ | X]`.
    pub fn z(&self) -> &Matrix {
        &self.z
    }

    /// `R̄ = W R`.
    pub fn rbar(&self) -> &Matrix {
        &self.rbar
    }

    /// `(I − M_x) R̄`.
    pub fn rbar_x(&self) -> &Matrix {
        &self.rbar_x
    }

    /// `(ZᵀZ)⁺`.
    pub fn zz_pinv(&self) -> &Matrix {
        &self.zz_pinv
    }

    /// `R̄ₓᵀ M_z R̄ₓ` (not divided by `n`).
    pub fn rbar_mz_rbar_x(&self) -> &Matrix {
        &self.sigma_r
    }

    pub(crate) fn zt_rbar_x(&self) -> &Matrix {
        &self.zt_rbar_x
    }

    pub fn diagnostics(&self) -> &DesignDiagnostics {
        &self.diagnostics
    }

    /// `Q(s)` as a vector.
    pub fn outcome_at(&self, s: f64) -> Result<Vector> {
        check_eval_point(s)?;
        Ok(Vector::from_vec(self.q.at(s)?))
    }

    /// `Σ̂_λ = R̄ₓᵀM_zR̄ₓ / n + λD` and its inverse.
    pub(crate) fn sigma_lambda_inverse(&self, penalty: &PenaltySpec) -> Result<Matrix> {
        let k = self.sigma_r.nrows();
        if penalty.d.nrows() != k {
            return Err(Error::Dimension(format!(
                "penalty matrix is {0}x{0} for a basis of dimension {k}",
                penalty.d.nrows()
            )));
        }
        let sigma = &self.sigma_r / self.n() as f64 + &penalty.d * penalty.lambda;
        if penalty.lambda > 0.0 {
            if let Some(inv) = linalg::inverse_spd(&sigma) {
                return Ok(inv);
            }
        }
        let pinv = pinv_symmetric(&sigma)?;
        if pinv.rank < k {
            return Err(Error::Singular(format!(
                "R̄ₓᵀM_zR̄ₓ + λnD has rank {} < K = {k}; use λ > 0 or fewer basis functions",
                pinv.rank
            )));
        }
        Ok(pinv.matrix)
    }
}

fn check_eval_point(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain {
            what: "evaluation point s",
            value: s,
            domain: "(0, 1)",
        });
    }
    Ok(())
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// `β̂(s) = [Xᵀ(I − S)X]⁻¹ Xᵀ(I − S)Q(s)`.
pub fn fit_beta<B: Basis>(design: &DesignSet<B>, s: f64) -> Result<Vec<f64>> {
    let q = design.outcome_at(s)?;
    let rhs = design.resid_x.transpose() * q;
    let rhs = Matrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let sol = linalg::solve_spd(&design.x_bread, &rhs).ok_or_else(|| Error::CollinearCovariates {
        covariates: weak_directions(&design.x_bread),
    })?;
    Ok(sol.column(0).iter().copied().collect())
}

/// `θ̂(s) = [R̄ₓᵀM_zR̄ₓ + λnD]⁻¹ R̄ₓᵀM_zQ(s)`. At `λ = 0` the generalized
/// inverse is used and a rank-deficient system is an error.
pub fn fit_theta<B: Basis>(design: &DesignSet<B>, s: f64, penalty: &PenaltySpec) -> Result<Vec<f64>> {
    let q = design.outcome_at(s)?;
    let inv = design.sigma_lambda_inverse(penalty)?;
    // [Σ + λnD]⁻¹ b = [Σ/n + λD]⁻¹ b / n
    let rhs = design.mz_rbar_x.transpose() * q / design.n() as f64;
    Ok(to_vec(&(inv * rhs)))
}

/// `θ̌(s) = [R̄ₓᵀM_zR̄ₓ]⁻ R̄ₓᵀM_zQ(s)` with the generalized inverse, the
/// unpenalized fit behind the residuals. Unlike [`fit_theta`] at `λ = 0` it
/// accepts a rank-deficient system.
pub fn fit_theta_check<B: Basis>(design: &DesignSet<B>, s: f64) -> Result<Vec<f64>> {
    let q = design.outcome_at(s)?;
    let inv = pinv_symmetric(&design.sigma_r)?.matrix;
    let rhs = design.mz_rbar_x.transpose() * q;
    Ok(to_vec(&(inv * rhs)))
}

/// `α̂(t, s) = φ_K(t)ᵀθ̂(s)`.
pub fn eval_alpha<B: Basis + ?Sized>(theta: &[f64], basis: &B, t: f64) -> Result<f64> {
    basis.combine(theta, t)
}

/// `ε̂_i(s) = q_i(s) − r̄_iᵀθ̌(s) − x_iᵀβ̂(s)` with the unpenalized `θ̌`.
pub fn residuals<B: Basis>(design: &DesignSet<B>, s: f64, beta: &[f64], theta_check: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != design.x.ncols() || theta_check.len() != design.rbar.ncols() {
        return Err(Error::Dimension(format!(
            "coefficient lengths ({}, {}) do not match the design ({}, {})",
            beta.len(),
            theta_check.len(),
            design.x.ncols(),
            design.rbar.ncols()
        )));
    }
    let q = design.outcome_at(s)?;
    let fitted = &design.rbar * Vector::from_column_slice(theta_check) + &design.x * Vector::from_column_slice(beta);
    Ok(to_vec(&(q - fitted)))
}

/// `Σ_i e_i² a_i a_iᵀ / n` over the rows `a_i` of `a`.
fn weighted_outer(a: &Matrix, resid: &[f64]) -> Matrix {
    let n = a.nrows();
    let mut scaled = a.clone();
    for (i, e) in resid.iter().enumerate() {
        scaled.row_mut(i).scale_mut(e * e);
    }
    linalg::symmetrize(&(a.transpose() * scaled / n as f64))
}

fn check_residuals<B: Basis>(design: &DesignSet<B>, resid: &[f64]) -> Result<()> {
    if resid.len() != design.n() {
        return Err(Error::Dimension(format!("{} residuals for {} units", resid.len(), design.n())));
    }
    Ok(())
}

/// `Ĉ(s) = B⁻¹ (Xᵀ(I − S)V̂(I − S)X / n) B⁻¹` with `B = Xᵀ(I − S)X / n` and
/// `V̂ = diag(ε̂²)`, the covariance of `√n(β̂(s) − β(s))`.
pub fn beta_cov<B: Basis>(design: &DesignSet<B>, resid: &[f64]) -> Result<Matrix> {
    check_residuals(design, resid)?;
    let bread = &design.x_bread / design.n() as f64;
    let inv = linalg::inverse_spd(&bread).ok_or_else(|| Error::CollinearCovariates {
        covariates: weak_directions(&bread),
    })?;
    let meat = weighted_outer(&design.resid_x, resid);
    Ok(linalg::symmetrize(&(&inv * meat * &inv)))
}

/// `Σ̂_λ⁻¹ Ω̂ Σ̂_λ⁻¹ / n`, where `Ω̂ = R̄ₓᵀM_zV̂M_zR̄ₓ / n`: the covariance of
/// `θ̂(s)`, so that `se(α̂(t, s))² = φ_K(t)ᵀ · this · φ_K(t)`.
pub fn theta_cov<B: Basis>(design: &DesignSet<B>, penalty: &PenaltySpec, resid: &[f64]) -> Result<Matrix> {
    check_residuals(design, resid)?;
    let inv = design.sigma_lambda_inverse(penalty)?;
    let omega = weighted_outer(&design.mz_rbar_x, resid);
    Ok(linalg::symmetrize(&(&inv * omega * &inv / design.n() as f64)))
}

/// Standard error `σ̂_λ(t, s) / √n` of `α̂(t, s)`.
pub fn alpha_se<B: Basis>(design: &DesignSet<B>, t: f64, penalty: &PenaltySpec, resid: &[f64]) -> Result<f64> {
    let cov = theta_cov(design, penalty, resid)?;
    let phi = Vector::from_vec(design.basis.eval(t)?);
    Ok(libm::sqrt(phi.dot(&(cov * &phi)).max(0.0)))
}

/// All estimates at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub s: f64,
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// `θ` estimated with `λ = 0`, used for the residuals.
    pub theta_check: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `Ĉ(s)`, the asymptotic covariance of `√n(β̂ − β)`.
    pub c_hat: Matrix,
    /// Covariance of `θ̂`; see [`theta_cov`].
    pub theta_cov: Matrix,
    pub lambda_used: f64,
    pub n: usize,
}

impl PointEstimate {
    /// `√(Ĉ_jj / n)`.
    pub fn beta_se(&self) -> Vec<f64> {
        (0..self.beta_hat.len())
            .map(|j| libm::sqrt((self.c_hat[(j, j)] / self.n as f64).max(0.0)))
            .collect()
    }

    pub fn alpha<B: Basis + ?Sized>(&self, basis: &B, t: f64) -> Result<f64> {
        basis.combine(&self.theta_hat, t)
    }

    pub fn alpha_se<B: Basis + ?Sized>(&self, basis: &B, t: f64) -> Result<f64> {
        let phi = Vector::from_vec(basis.eval(t)?);
        Ok(libm::sqrt(phi.dot(&(&self.theta_cov * &phi)).max(0.0)))
    }
}

/// Runs the full estimator at `s`.
pub fn estimate_point<B: Basis>(design: &DesignSet<B>, s: f64, penalty: &PenaltySpec) -> Result<PointEstimate> {
    let beta_hat = fit_beta(design, s)?;
    let theta_hat = fit_theta(design, s, penalty)?;
    let theta_check = fit_theta_check(design, s)?;
    let resid = residuals(design, s, &beta_hat, &theta_check)?;
    let c_hat = beta_cov(design, &resid)?;
    let theta_cov = theta_cov(design, penalty, &resid)?;
    Ok(PointEstimate {
        s,
        beta_hat,
        theta_hat,
        theta_check,
        residuals: resid,
        c_hat,
        theta_cov,
        lambda_used: penalty.lambda,
        n: design.n(),
    })
}

/// Evaluation points and penalty for [`estimate_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationPlan {
    pub s_values: Vec<f64>,
    pub t_values: Vec<f64>,
    pub penalty: PenaltySpec,
}

/// One point of the `α̂` surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaPoint {
    pub s: f64,
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
}

/// Estimates over several `s`; failures at individual `s` are collected
/// instead of aborting the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEstimate {
    pub points: Vec<PointEstimate>,
    /// `α̂(t, s)` for every successful `s` and every `t`, `s`-major.
    pub surface: Vec<AlphaPoint>,
    pub failures: Vec<(f64, Error)>,
}

pub fn estimate_curve<B: Basis>(design: &DesignSet<B>, plan: &EstimationPlan) -> Result<CurveEstimate> {
    for &t in &plan.t_values {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: "[0, 1]",
            });
        }
    }
    let mut points = Vec::with_capacity(plan.s_values.len());
    let mut surface = Vec::with_capacity(plan.s_values.len() * plan.t_values.len());
    let mut failures = Vec::new();
    for &s in &plan.s_values {
        match estimate_point(design, s, &plan.penalty) {
            Ok(pe) => {
                for &t in &plan.t_values {
                    surface.push(AlphaPoint {
                        s,
                        t,
                        estimate: pe.alpha(&design.basis, t)?,
                        std_error: pe.alpha_se(&design.basis, t)?,
                    });
                }
                points.push(pe);
            }
            Err(e) => failures.push((s, e)),
        }
    }
    Ok(CurveEstimate {
        points,
        surface,
        failures,
    })
}

/// The estimator on discretely observed outcomes: interpolate onto `grid`,
/// then proceed as with fully observed functions.
pub fn fit_feasible<B: Basis + Clone>(
    obs: &DiscreteFunctionObservations,
    w: &SpatialWeights,
    x_raw: &Matrix,
    basis: &B,
    grid: &Grid,
    config: &DesignConfig,
    plan: &EstimationPlan,
) -> Result<(DesignSet<B>, CurveEstimate)> {
    let q_hat = interpolate_sample(obs, grid)?;
    let design = assemble_design(&q_hat, w, x_raw, basis, config)?;
    let curve = estimate_curve(&design, plan)?;
    Ok((design, curve))
}
