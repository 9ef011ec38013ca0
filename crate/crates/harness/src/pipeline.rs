//! File-based `simulate`, `estimate` and `test` commands.

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::io::{self, InputData};
use fsar::basis::{BSplineBasis, Basis};
use fsar::dgp::{observe_at, sample_discrete, simulate, SimulatedDataset};
use fsar::estimator::{assemble_design, estimate_curve, CurveEstimate, DesignDiagnostics, DesignSet, EstimationPlan};
use fsar::funcspace::interpolate_sample;
use fsar::inference::{wald_test_from, WaldResult};
use fsar::rng::replication_seed;
use serde_json::json;
use std::path::{Path, PathBuf};

/// Unit ids used for simulated data.
pub fn simulated_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("u{i:0width$}")).collect()
}

pub fn simulated_covariate_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// The dataset of replication `first_replication` under `cfg.seed`.
pub fn simulate_dataset(cfg: &RunConfig) -> Result<(SimulatedDataset, u64)> {
    cfg.validate()?;
    let seed = replication_seed(cfg.seed, cfg.first_replication);
    Ok((simulate(&cfg.simulation()?, seed)?, seed))
}

/// In-memory version of what [`run_simulate`] writes: observations at the
/// grid nodes, or at `m` random points per unit when `m` is set.
pub fn simulated_input(cfg: &RunConfig, data: &SimulatedDataset, seed: u64) -> Result<InputData> {
    let n = data.q.n_units();
    let observations = match cfg.m {
        Some(m) => sample_discrete(&data.q, m, seed)?,
        None => {
            let pts = data.q.grid().points().to_vec();
            observe_at(&data.q, &vec![pts; n])?
        }
    };
    Ok(InputData {
        unit_ids: simulated_ids(n),
        covariate_names: simulated_covariate_names(data.x.ncols()),
        x: data.x.clone(),
        observations,
        weights: data.weights.clone(),
    })
}

/// Writes `units.csv`, `quantiles.csv`, `edges.csv`, the true curves in
/// `sample.csv` and `manifest.json` to `cfg.output`.
pub fn run_simulate(cfg: &RunConfig) -> Result<PathBuf> {
    let (data, seed) = simulate_dataset(cfg)?;
    let input = simulated_input(cfg, &data, seed)?;
    let out = &cfg.output;
    io::write_units(&out.join(io::UNITS_FILE), &input.unit_ids, &input.covariate_names, &input.x)?;
    io::write_quantiles(&out.join(io::QUANTILES_FILE), &input.unit_ids, &input.observations)?;
    io::write_edges(&out.join(io::EDGES_FILE), &input.unit_ids, &data.weights)?;
    io::write_sample(&out.join(io::SAMPLE_FILE), &input.unit_ids, &data.q)?;
    let c = &data.completeness;
    let manifest = json!({
        "command": "simulate",
        "config": cfg,
        "seed": seed,
        "neumann_iterations": data.neumann_iters,
        "converged": data.converged,
        "isolated_units": data.isolated_units(),
        "max_gap": input.observations.max_gap(),
        "holder_exponent": cfg.holder_exponent,
        "completeness": {
            "alpha_sup": c.alpha_sup,
            "row_sum_norm": c.row_sum_norm,
            "product": c.product,
            "alt_bound": c.alt_bound,
            "satisfied": c.satisfied(),
        },
    });
    io::write_json(&out.join(io::MANIFEST_FILE), &manifest)?;
    Ok(out.clone())
}

/// Everything produced by one estimation run.
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub lambda_c: f64,
    pub lambda: f64,
    pub curve: CurveEstimate,
    pub tests: Vec<WaldResult>,
    pub diagnostics: DesignDiagnostics,
    pub w_inf_norm: f64,
    pub isolated_units: usize,
    pub max_gap: f64,
    /// `sup |α̂|`, `‖W‖_∞ sup |α̂|` and `‖W‖_∞ max_s ∫|α̂(t, s)| dt` over the
    /// estimated `s` values.
    pub alpha_sup: f64,
    pub completeness_product: f64,
    pub completeness_alt_bound: f64,
}

pub fn design_from_input(cfg: &RunConfig, input: &InputData) -> Result<DesignSet<BSplineBasis>> {
    let grid = cfg.grid()?;
    let sample = interpolate_sample(&input.observations, &grid)?;
    Ok(assemble_design(&sample, &input.weights, &input.x, &cfg.basis()?, &cfg.design())?)
}

/// Estimates at every `s` in `cfg.s_eval` with the first `λ_c` and tests
/// `α(·, s) = 0` on `cfg.interval`.
pub fn estimate_input(cfg: &RunConfig, input: &InputData) -> Result<EstimationRun> {
    cfg.validate()?;
    let design = design_from_input(cfg, input)?;
    let n = design.n();
    let lambda_c = cfg.lambda_c[0];
    let penalty = cfg.penalty(lambda_c, n)?;
    let plan = EstimationPlan {
        s_values: cfg.s_eval.clone(),
        t_values: cfg.t_values(),
        penalty: penalty.clone(),
    };
    let curve = estimate_curve(&design, &plan)?;
    if let Some((s, e)) = curve.failures.first() {
        eprintln!("estimation failed at s = {s}");
        return Err(HarnessError::Model(e.clone()));
    }
    let tests = curve
        .points
        .iter()
        .map(|p| wald_test_from(&design, p, cfg.interval(), &penalty))
        .collect::<fsar::Result<Vec<_>>>()?;

    let grid = design.grid();
    let w_inf_norm = input.weights.infinity_norm();
    let mut alpha_sup = 0.0_f64;
    let mut alpha_int = 0.0_f64;
    for p in &curve.points {
        let vals: Vec<f64> = grid
            .points()
            .iter()
            .map(|&t| design.basis().combine(&p.theta_hat, t).map(f64::abs))
            .collect::<fsar::Result<_>>()?;
        alpha_sup = vals.iter().fold(alpha_sup, |a, v| a.max(*v));
        alpha_int = alpha_int.max(grid.integrate(&vals)?);
    }
    Ok(EstimationRun {
        lambda_c,
        lambda: penalty.lambda,
        curve,
        tests,
        diagnostics: design.diagnostics().clone(),
        w_inf_norm,
        isolated_units: input.weights.isolated_count(),
        max_gap: input.observations.max_gap(),
        alpha_sup,
        completeness_product: alpha_sup * w_inf_norm,
        completeness_alt_bound: alpha_int * w_inf_norm,
    })
}

fn manifest(cfg: &RunConfig, command: &str, run: &EstimationRun) -> serde_json::Value {
    let d = &run.diagnostics;
    json!({
        "command": command,
        "config": cfg,
        "lambda_c": run.lambda_c,
        "lambda": run.lambda,
        "diagnostics": {
            "n": d.n,
            "covariates": d.n_covariates,
            "instruments": d.n_instruments,
            "basis_dim": d.basis_dim,
            "instrument_rank": d.instrument_rank,
            "order_condition": d.order_condition,
            "w_inf_norm": run.w_inf_norm,
            "isolated_units": run.isolated_units,
            "identification_min_eig": d.identification_min_eig,
            "max_gap": run.max_gap,
            "holder_exponent": cfg.holder_exponent,
        },
        "completeness": {
            "alpha_sup": run.alpha_sup,
            "product": run.completeness_product,
            "alt_bound": run.completeness_alt_bound,
            "satisfied": run.completeness_product < 1.0 || run.completeness_alt_bound < 1.0,
        },
        "failures": run.curve.failures.len(),
    })
}

fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir
        .as_deref()
        .ok_or_else(|| HarnessError::Config("data_dir is required for this command".into()))
}

/// Reads inputs from `cfg.data_dir` and writes `beta_estimates.csv`,
/// `alpha_surface.csv`, `alpha_plot.csv`, `test_results.csv` and
/// `manifest.json` to `cfg.output`.
pub fn run_estimate(cfg: &RunConfig) -> Result<EstimationRun> {
    let input = io::read_input(data_dir(cfg)?)?;
    let run = estimate_input(cfg, &input)?;
    let out = &cfg.output;
    io::write_beta(&out.join(io::BETA_FILE), &input.covariate_names, &run.curve)?;
    io::write_alpha(&out.join(io::ALPHA_FILE), &run.curve)?;
    io::write_plot(&out.join(io::PLOT_FILE), &io::emit_plot_data(&run.curve))?;
    io::write_tests(&out.join(io::TEST_FILE), &run.tests)?;
    io::write_json(&out.join(io::MANIFEST_FILE), &manifest(cfg, "estimate", &run))?;
    Ok(run)
}

/// Like [`run_estimate`] but writes only `test_results.csv` and the manifest.
pub fn run_test(cfg: &RunConfig) -> Result<EstimationRun> {
    if cfg.max_iv_order > 1 {
        eprintln!(
            "warning: under a global null higher-order spatial lags are not valid instruments; \
             max_iv_order = {} is used as configured",
            cfg.max_iv_order
        );
    }
    let input = io::read_input(data_dir(cfg)?)?;
    let run = estimate_input(cfg, &input)?;
    let out = &cfg.output;
    io::write_tests(&out.join(io::TEST_FILE), &run.tests)?;
    io::write_json(&out.join(io::MANIFEST_FILE), &manifest(cfg, "test", &run))?;
    Ok(run)
}
