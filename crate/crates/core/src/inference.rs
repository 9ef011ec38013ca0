//! Wald-type test of `α(·, s) = a` on a sub-interval `I`.
//!
//! `T = n ∫_I (α̂(t, s) − a(t))² dt` is standardized by plug-in estimates of
//! its mean `μ = tr(AB)` and variance `v = 2 tr(ABAB)`, where
//! `A = Ξᵀ Φ_I Ξ`, `B = Zᵀ V̂ Z / n`, `Ξ = Σ̂_λ⁻¹ (R̄ₓᵀZ/n)(ZᵀZ/n)⁺` and
//! `Φ_I = ∫_I φ_K φ_Kᵀ`. Large values of `(T − μ)/√v` reject.

use crate::basis::Basis;
use crate::estimator::{estimate_point, DesignSet, PenaltySpec, PointEstimate};
use crate::{linalg, normal, Error, Matrix, Result, Vector};
use alloc::format;
use alloc::vec::Vec;

/// Nominal levels reported in [`WaldResult::reject_at`].
pub const TEST_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub s: f64,
    pub interval: (f64, f64),
    pub statistic: f64,
    pub mu_hat: f64,
    pub v_hat: f64,
    pub z: f64,
    pub p_value: f64,
    /// `(level, z > Φ⁻¹(1 − level))` for each of [`TEST_LEVELS`].
    pub reject_at: [(f64, bool); 3],
}

impl WaldResult {
    pub fn rejects(&self, level: f64) -> Option<bool> {
        self.reject_at.iter().find(|(l, _)| *l == level).map(|(_, r)| *r)
    }
}

fn interval_gram<B: Basis>(design: &DesignSet<B>, interval: (f64, f64)) -> Result<Matrix> {
    design.basis().gram_matrix_on(interval.0, interval.1, design.grid())
}

/// `n θᵀ Φ_I θ`.
pub fn wald_statistic<B: Basis>(design: &DesignSet<B>, theta_hat: &[f64], interval: (f64, f64)) -> Result<f64> {
    let phi = interval_gram(design, interval)?;
    if theta_hat.len() != phi.nrows() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a basis of dimension {}",
            theta_hat.len(),
            phi.nrows()
        )));
    }
    let th = Vector::from_column_slice(theta_hat);
    Ok((design.n() as f64 * th.dot(&(phi * &th))).max(0.0))
}

/// `(μ̂, v̂)`. A zero residual vector gives `(0, 0)`.
pub fn wald_moments<B: Basis>(
    design: &DesignSet<B>,
    residuals: &[f64],
    interval: (f64, f64),
    penalty: &PenaltySpec,
) -> Result<(f64, f64)> {
    let n = design.n();
    if residuals.len() != n {
        return Err(Error::Dimension(format!("{} residuals for {n} units", residuals.len())));
    }
    let phi = interval_gram(design, interval)?;
    let sigma_inv = design.sigma_lambda_inverse(penalty)?;
    // Ξ = Σ̂_λ⁻¹ (R̄ₓᵀZ)(ZᵀZ)⁺; the factors of n cancel.
    let xi = sigma_inv * design.zt_rbar_x().transpose() * design.zz_pinv();
    let a = linalg::symmetrize(&(xi.transpose() * phi * &xi));
    let z = design.z();
    let mut scaled = z.clone();
    for (i, e) in residuals.iter().enumerate() {
        scaled.row_mut(i).scale_mut(e * e);
    }
    let b = linalg::symmetrize(&(z.transpose() * scaled / n as f64));
    let ab = a * b;
    let mu = ab.trace();
    // tr(ABAB) = Σ_ij (AB)_ij (AB)_ji
    let v = 2.0 * ab.component_mul(&ab.transpose()).sum();
    Ok((mu.max(0.0), v.max(0.0)))
}

fn assemble(s: f64, interval: (f64, f64), statistic: f64, mu_hat: f64, v_hat: f64) -> Result<WaldResult> {
    if !(v_hat > 0.0 && v_hat.is_finite()) {
        return Err(Error::Degenerate(format!(
            "plug-in variance of the Wald statistic is {v_hat}; residuals or design are degenerate"
        )));
    }
    let z = (statistic - mu_hat) / libm::sqrt(v_hat);
    let reject_at = TEST_LEVELS.map(|level| (level, z > normal::quantile(1.0 - level)));
    Ok(WaldResult {
        s,
        interval,
        statistic,
        mu_hat,
        v_hat,
        z,
        p_value: normal::sf(z),
        reject_at,
    })
}

/// Tests `α(t, s) = 0` for `t ∈ I`.
pub fn wald_test<B: Basis>(design: &DesignSet<B>, s: f64, interval: (f64, f64), penalty: &PenaltySpec) -> Result<WaldResult> {
    let est = estimate_point(design, s, penalty)?;
    wald_test_from(design, &est, interval, penalty)
}

/// [`wald_test`] reusing an estimate obtained with the same `penalty`.
pub fn wald_test_from<B: Basis>(
    design: &DesignSet<B>,
    est: &PointEstimate,
    interval: (f64, f64),
    penalty: &PenaltySpec,
) -> Result<WaldResult> {
    if est.lambda_used != penalty.lambda {
        return Err(Error::Invalid(format!(
            "estimate used λ = {} but the test was asked for λ = {}",
            est.lambda_used, penalty.lambda
        )));
    }
    let statistic = wald_statistic(design, &est.theta_hat, interval)?;
    let (mu, v) = wald_moments(design, &est.residuals, interval, penalty)?;
    assemble(est.s, interval, statistic, mu, v)
}

/// Tests `α(t, s) = a(t)` for `t ∈ I`; `a` holds values at the design grid
/// nodes. The statistic is `n ∫_I (α̂ − a)²`, with the same plug-in moments
/// as [`wald_test`].
pub fn wald_test_general<B: Basis>(
    design: &DesignSet<B>,
    s: f64,
    interval: (f64, f64),
    penalty: &PenaltySpec,
    a: &[f64],
) -> Result<WaldResult> {
    let grid = design.grid();
    grid.check_len(a.len())?;
    let est = estimate_point(design, s, penalty)?;
    let statistic = if a.iter().all(|&v| v == 0.0) {
        wald_statistic(design, &est.theta_hat, interval)?
    } else {
        // θᵀΦ_Iθ − 2θᵀ∫_I φ a + ∫_I a²
        let weights = grid.interval_weights(interval.0, interval.1)?;
        let phi_grid = design.basis().design_matrix(grid)?;
        let gram = interval_gram(design, interval)?;
        let th = Vector::from_column_slice(&est.theta_hat);
        let wa: Vec<f64> = weights.iter().zip(a).map(|(w, v)| w * v).collect();
        let cross = phi_grid.transpose() * Vector::from_vec(wa.clone());
        let aa: f64 = wa.iter().zip(a).map(|(w, v)| w * v).sum();
        let quad = th.dot(&(gram * &th)) - 2.0 * th.dot(&cross) + aa;
        (design.n() as f64 * quad).max(0.0)
    };
    let (mu, v) = wald_moments(design, &est.residuals, interval, penalty)?;
    assemble(s, interval, statistic, mu, v)
}
