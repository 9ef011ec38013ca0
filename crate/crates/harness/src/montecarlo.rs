//! Monte Carlo runner.
//!
//! Replication `r` simulates with `replication_seed(seed, r)`, so any range
//! of replications can be re-run on its own. Replications run on a rayon
//! pool, are collected in index order and folded sequentially, which keeps
//! the report independent of the thread count.

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::io::{fmt_f64, write_json};
use fsar::basis::{BSplineBasis, Basis};
use fsar::dgp::{sample_discrete, simulate, KernelSpec, SimulationConfig};
use fsar::estimator::{assemble_design, estimate_point, DesignConfig};
use fsar::funcspace::interpolate_sample;
use fsar::inference::wald_test_from;
use fsar::rng::replication_seed;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::path::Path;
use std::time::{Duration, Instant};

pub const ESTIMATION_FILE: &str = "estimation.csv";
pub const REJECTION_FILE: &str = "rejection.csv";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const REPORT_FILE: &str = "report.json";

/// Aggregates for one `λ_c` at one `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaCell {
    pub lambda_c: f64,
    /// Mean over `t` of the Monte Carlo bias of `α̂(t, s)`.
    pub alpha_bias: f64,
    /// Mean over `t` of the Monte Carlo RMSE of `α̂(t, s)`.
    pub alpha_rmse: f64,
    /// Share of 95% pointwise intervals covering `α(t, s)`, per `t`.
    pub alpha_coverage: Vec<f64>,
    /// Rejection frequencies at 10%, 5% and 1%.
    pub rejection: [f64; 3],
}

/// Aggregates at one `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub s: f64,
    /// Averages over the covariates (the intercept is not included).
    pub beta_bias: f64,
    pub beta_rmse: f64,
    pub beta_bias_by_coef: Vec<f64>,
    pub beta_rmse_by_coef: Vec<f64>,
    /// Share of 95% intervals covering `β_j(s)`.
    pub beta_coverage: Vec<f64>,
    pub cells: Vec<LambdaCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub dgp: u8,
    pub rho: Option<f64>,
    pub n: usize,
    pub inner_knots: usize,
    pub m: Option<usize>,
    pub t_values: Vec<f64>,
    /// Replications that entered the aggregates.
    pub replications: usize,
    pub failures: usize,
    pub mean_neumann_iterations: f64,
    /// Mean realized maximal gap between observation points, when `m` is set.
    pub mean_max_gap: Option<f64>,
    pub points: Vec<PointReport>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl MonteCarloReport {
    pub fn point(&self, s: f64) -> Option<&PointReport> {
        self.points.iter().find(|p| p.s == s)
    }

    pub fn cell(&self, s: f64, lambda_c: f64) -> Option<&LambdaCell> {
        self.point(s)?.cells.iter().find(|c| c.lambda_c == lambda_c)
    }
}

/// Estimates from one replication.
#[derive(Debug, Clone)]
struct Replication {
    neumann_iters: usize,
    max_gap: Option<f64>,
    points: Vec<ReplicationPoint>,
}

#[derive(Debug, Clone)]
struct ReplicationPoint {
    beta_hat: Vec<f64>,
    beta_se: Vec<f64>,
    cells: Vec<ReplicationCell>,
}

#[derive(Debug, Clone)]
struct ReplicationCell {
    alpha_hat: Vec<f64>,
    alpha_se: Vec<f64>,
    reject: [bool; 3],
}

struct Setup {
    sim: SimulationConfig,
    basis: BSplineBasis,
    design: DesignConfig,
    t_values: Vec<f64>,
}

fn replicate(cfg: &RunConfig, setup: &Setup, rep: u64) -> fsar::Result<Replication> {
    let seed = replication_seed(cfg.seed, rep);
    let data = simulate(&setup.sim, seed)?;
    let (sample, max_gap) = match cfg.m {
        Some(m) => {
            let obs = sample_discrete(&data.q, m, seed)?;
            (interpolate_sample(&obs, &setup.sim.grid)?, Some(obs.max_gap()))
        }
        None => (data.q.clone(), None),
    };
    let design = assemble_design(&sample, &data.weights, &data.x, &setup.basis, &setup.design)?;
    let n = design.n();
    let mut points = Vec::with_capacity(cfg.s_eval.len());
    for &s in &cfg.s_eval {
        let mut cells = Vec::with_capacity(cfg.lambda_c.len());
        let mut beta = None;
        for &lc in &cfg.lambda_c {
            let penalty = fsar::estimator::PenaltySpec::ridge_rate(setup.basis.dim(), lc, n)?;
            let est = estimate_point(&design, s, &penalty)?;
            let test = wald_test_from(&design, &est, cfg.interval(), &penalty)?;
            let mut alpha_hat = Vec::with_capacity(setup.t_values.len());
            let mut alpha_se = Vec::with_capacity(setup.t_values.len());
            for &t in &setup.t_values {
                alpha_hat.push(est.alpha(&setup.basis, t)?);
                alpha_se.push(est.alpha_se(&setup.basis, t)?);
            }
            cells.push(ReplicationCell {
                alpha_hat,
                alpha_se,
                reject: test.reject_at.map(|(_, r)| r),
            });
            if beta.is_none() {
                beta = Some((est.beta_hat[1..].to_vec(), est.beta_se()[1..].to_vec()));
            }
        }
        let (beta_hat, beta_se) = beta.expect("lambda_c is nonempty");
        points.push(ReplicationPoint {
            beta_hat,
            beta_se,
            cells,
        });
    }
    Ok(Replication {
        neumann_iters: data.neumann_iters,
        max_gap,
        points,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn covered(est: f64, se: f64, truth: f64) -> bool {
    (est - truth).abs() <= 1.96 * se
}

fn aggregate(cfg: &RunConfig, setup: &Setup, reps: &[Replication], failures: usize, wall: Duration) -> MonteCarloReport {
    let r = reps.len() as f64;
    let kernel: &KernelSpec = &setup.sim.kernel;
    let mut points = Vec::with_capacity(cfg.s_eval.len());
    for (si, &s) in cfg.s_eval.iter().enumerate() {
        let beta0 = setup.sim.coefs.values(s);
        let d = beta0.len();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut cov = vec![0.0; d];
        for rep in reps {
            let p = &rep.points[si];
            for j in 0..d {
                let e = p.beta_hat[j] - beta0[j];
                sum[j] += e;
                sq[j] += e * e;
                cov[j] += f64::from(u8::from(covered(p.beta_hat[j], p.beta_se[j], beta0[j])));
            }
        }
        let bias: Vec<f64> = sum.iter().map(|v| v / r).collect();
        let rmse: Vec<f64> = sq.iter().map(|v| (v / r).sqrt()).collect();
        let alpha0: Vec<f64> = setup
            .t_values
            .iter()
            .map(|&t| kernel.value(t, s).expect("built-in kernels are closed form"))
            .collect();
        let cells = cfg
            .lambda_c
            .iter()
            .enumerate()
            .map(|(li, &lc)| {
                let nt = alpha0.len();
                let mut sum = vec![0.0; nt];
                let mut sq = vec![0.0; nt];
                let mut cov = vec![0.0; nt];
                let mut rej = [0.0; 3];
                for rep in reps {
                    let c = &rep.points[si].cells[li];
                    for k in 0..nt {
                        let e = c.alpha_hat[k] - alpha0[k];
                        sum[k] += e;
                        sq[k] += e * e;
                        cov[k] += f64::from(u8::from(covered(c.alpha_hat[k], c.alpha_se[k], alpha0[k])));
                    }
                    for (acc, hit) in rej.iter_mut().zip(c.reject) {
                        *acc += f64::from(u8::from(hit));
                    }
                }
                LambdaCell {
                    lambda_c: lc,
                    alpha_bias: mean(&sum.iter().map(|v| v / r).collect::<Vec<_>>()),
                    alpha_rmse: mean(&sq.iter().map(|v| (v / r).sqrt()).collect::<Vec<_>>()),
                    alpha_coverage: cov.iter().map(|v| v / r).collect(),
                    rejection: rej.map(|v| v / r),
                }
            })
            .collect();
        points.push(PointReport {
            s,
            beta_bias: mean(&bias),
            beta_rmse: mean(&rmse),
            beta_bias_by_coef: bias,
            beta_rmse_by_coef: rmse,
            beta_coverage: cov.iter().map(|v| v / r).collect(),
            cells,
        });
    }
    let gaps: Vec<f64> = reps.iter().filter_map(|x| x.max_gap).collect();
    MonteCarloReport {
        dgp: cfg.dgp,
        rho: cfg.rho,
        n: cfg.n,
        inner_knots: cfg.inner_knots,
        m: cfg.m,
        t_values: setup.t_values.clone(),
        replications: reps.len(),
        failures,
        mean_neumann_iterations: mean(&reps.iter().map(|x| x.neumann_iters as f64).collect::<Vec<_>>()),
        mean_max_gap: (!gaps.is_empty()).then(|| mean(&gaps)),
        points,
        wall_time: wall,
    }
}

/// Runs `cfg.replications` replications starting at `cfg.first_replication`.
/// With `m` set, each replication observes the curves at `m` random points
/// and estimates from the interpolated curves.
pub fn run_montecarlo(cfg: &RunConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let start = Instant::now();
    let setup = Setup {
        sim: cfg.simulation()?,
        basis: cfg.basis()?,
        design: cfg.design(),
        t_values: cfg.t_values(),
    };
    let first = cfg.first_replication;
    let indices: Vec<u64> = (first..first + cfg.replications as u64).collect();
    let work = || -> Vec<(u64, fsar::Result<Replication>)> {
        indices
            .par_iter()
            .map(|&rep| (rep, replicate(cfg, &setup, rep)))
            .collect()
    };
    let outcomes = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut reps = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(r) => reps.push(r),
            Err(e) if cfg.lenient => {
                eprintln!("replication {rep} failed and is excluded: {e}");
                failures += 1;
            }
            Err(e) => {
                eprintln!("replication {rep} failed");
                return Err(HarnessError::Model(e));
            }
        }
    }
    if reps.is_empty() {
        return Err(HarnessError::Model(fsar::Error::Degenerate("every replication failed".into())));
    }
    Ok(aggregate(cfg, &setup, &reps, failures, start.elapsed()))
}

/// The discretely observed variant; `cfg.m` must be set.
pub fn run_montecarlo_interp(cfg: &RunConfig) -> Result<MonteCarloReport> {
    if cfg.m.is_none() {
        return Err(HarnessError::Config("the interpolated experiment needs m".into()));
    }
    run_montecarlo(cfg)
}

fn label(v: f64) -> String {
    format!("{v}")
}

/// CSV tables: estimation accuracy, rejection frequencies and coverage.
/// Wall time is excluded so the files depend only on the configuration.
pub fn report_tables(report: &MonteCarloReport) -> [(String, String); 3] {
    let rho = report.rho.map(label).unwrap_or_default();
    let m = report.m.map(|m| m.to_string()).unwrap_or_default();
    let keys = format!("{},{},{},{},{}", report.dgp, rho, m, report.n, report.inner_knots);

    let mut est = String::from("dgp,rho,m,n,knots,s,beta_bias,beta_rmse");
    if let Some(p) = report.points.first() {
        for c in &p.cells {
            let l = label(c.lambda_c);
            est.push_str(&format!(",alpha_bias_lc{l},alpha_rmse_lc{l}"));
        }
    }
    est.push('\n');
    for p in &report.points {
        est.push_str(&format!("{keys},{},{},{}", fmt_f64(p.s), fmt_f64(p.beta_bias), fmt_f64(p.beta_rmse)));
        for c in &p.cells {
            est.push_str(&format!(",{},{}", fmt_f64(c.alpha_bias), fmt_f64(c.alpha_rmse)));
        }
        est.push('\n');
    }

    let mut rej = String::from("dgp,rho,m,n,knots,s,lambda_c,rej_10,rej_05,rej_01\n");
    for p in &report.points {
        for c in &p.cells {
            let [a, b, d] = c.rejection.map(fmt_f64);
            rej.push_str(&format!("{keys},{},{},{a},{b},{d}\n", fmt_f64(p.s), label(c.lambda_c)));
        }
    }

    let mut cov = String::from("s,lambda_c,target,t,coverage\n");
    for p in &report.points {
        for (j, c) in p.beta_coverage.iter().enumerate() {
            cov.push_str(&format!("{},,beta{},,{}\n", fmt_f64(p.s), j + 1, fmt_f64(*c)));
        }
        for c in &p.cells {
            for (t, v) in report.t_values.iter().zip(&c.alpha_coverage) {
                cov.push_str(&format!(
                    "{},{},alpha,{},{}\n",
                    fmt_f64(p.s),
                    label(c.lambda_c),
                    fmt_f64(*t),
                    fmt_f64(*v)
                ));
            }
        }
    }
    [
        (ESTIMATION_FILE.to_string(), est),
        (REJECTION_FILE.to_string(), rej),
        (COVERAGE_FILE.to_string(), cov),
    ]
}

/// Writes the CSV tables and `report.json` to `dir`.
pub fn write_report(dir: &Path, cfg: &RunConfig, report: &MonteCarloReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for (name, text) in report_tables(report) {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    }
    let value = json!({ "config": cfg, "report": report });
    write_json(&dir.join(REPORT_FILE), &value)
}
