//! Run configuration. Every default reproduces the baseline simulation
//! design, so an empty config file is a valid Monte Carlo experiment.

use crate::error::{HarnessError, Result};
use fsar::basis::BSplineBasis;
use fsar::dgp::{KernelSpec, SimulationConfig};
use fsar::estimator::{DesignConfig, PenaltySpec};
use fsar::funcspace::Grid;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Kernel design 1, 2 or 3.
    pub dgp: u8,
    /// Scale of the design-2 kernel for size and power experiments.
    pub rho: Option<f64>,
    pub n: usize,
    /// Defaults to `⌈n / 20⌉`.
    pub lattice_rows: Option<usize>,
    pub lattice_cols: usize,
    /// Interior grid nodes `g / (G + 1)`.
    pub grid_size: usize,
    pub degree: usize,
    pub inner_knots: usize,
    pub max_iv_order: usize,
    /// Penalty constants; `λ = λ_c n^{-3/5}` with `D = I`.
    pub lambda_c: Vec<f64>,
    pub s_eval: Vec<f64>,
    /// Number of equispaced evaluation points `j / (t_points + 1)`.
    pub t_points: usize,
    pub replications: usize,
    /// Index of the first replication, for partial re-runs.
    pub first_replication: u64,
    /// Observations per unit; unset means fully observed curves.
    pub m: Option<usize>,
    /// Hölder exponent assumed for the outcome curves, recorded with the
    /// realized maximal gap of the observation points.
    pub holder_exponent: f64,
    pub seed: u64,
    pub interval: [f64; 2],
    pub neumann_tol: f64,
    pub output: PathBuf,
    /// Directory with `units.csv`, `quantiles.csv`, `edges.csv` and
    /// optionally `sizes.csv`.
    pub data_dir: Option<PathBuf>,
    /// Exclude failed replications instead of aborting.
    pub lenient: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dgp: 1,
            rho: None,
            n: 400,
            lattice_rows: None,
            lattice_cols: 40,
            grid_size: 199,
            degree: 3,
            inner_knots: 2,
            max_iv_order: 2,
            lambda_c: vec![0.5, 1.0, 2.0, 3.0],
            s_eval: vec![0.5],
            t_points: 19,
            replications: 1000,
            first_replication: 0,
            m: None,
            holder_exponent: 1.0,
            seed: 1,
            interval: [0.1, 0.9],
            neumann_tol: 1e-3,
            output: PathBuf::from("fsar-out"),
            data_dir: None,
            lenient: false,
            threads: None,
        }
    }
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dgp) {
            return Err(config_error(format!("dgp must be 1, 2 or 3, got {}", self.dgp)));
        }
        if let Some(rho) = self.rho {
            if self.dgp != 2 {
                return Err(config_error("rho scales the design-2 kernel; set dgp = 2"));
            }
            if !rho.is_finite() {
                return Err(config_error("rho must be finite"));
            }
        }
        for (name, v) in [
            ("n", self.n),
            ("lattice_cols", self.lattice_cols),
            ("grid_size", self.grid_size),
            ("max_iv_order", self.max_iv_order),
            ("t_points", self.t_points),
            ("replications", self.replications),
        ] {
            if v == 0 {
                return Err(config_error(format!("{name} must be positive")));
            }
        }
        if self.lattice_rows == Some(0) {
            return Err(config_error("lattice_rows must be positive"));
        }
        if self.rows() * self.lattice_cols < self.n {
            return Err(config_error(format!(
                "a {}x{} lattice cannot hold {} units",
                self.rows(),
                self.lattice_cols,
                self.n
            )));
        }
        if self.lambda_c.is_empty() || self.lambda_c.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(config_error("lambda_c needs at least one finite nonnegative value"));
        }
        if self.s_eval.is_empty() || self.s_eval.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(config_error("s_eval values must lie in (0, 1)"));
        }
        let [a, b] = self.interval;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(config_error(format!("interval [{a}, {b}] must satisfy 0 <= a < b <= 1")));
        }
        if let Some(m) = self.m {
            if m < 2 {
                return Err(config_error("m must be at least 2"));
            }
        }
        if !(self.neumann_tol > 0.0) {
            return Err(config_error("neumann_tol must be positive"));
        }
        if self.threads == Some(0) {
            return Err(config_error("threads must be positive"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.lattice_rows.unwrap_or(self.n.div_ceil(20))
    }

    pub fn kernel(&self) -> KernelSpec {
        match (self.dgp, self.rho) {
            (2, Some(rho)) => KernelSpec::ScaledDgp2(rho),
            (1, _) => KernelSpec::Dgp1,
            (2, _) => KernelSpec::Dgp2,
            _ => KernelSpec::Dgp3,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::interior(self.grid_size)?)
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        let mut sim = SimulationConfig::standard(self.n, self.kernel())?;
        sim.lattice_rows = self.rows();
        sim.lattice_cols = self.lattice_cols;
        sim.grid = self.grid()?;
        sim.tol = self.neumann_tol;
        Ok(sim)
    }

    pub fn basis(&self) -> Result<BSplineBasis> {
        Ok(BSplineBasis::uniform(self.degree, self.inner_knots)?)
    }

    pub fn design(&self) -> DesignConfig {
        DesignConfig {
            max_iv_order: self.max_iv_order,
            ..DesignConfig::default()
        }
    }

    pub fn penalty(&self, lambda_c: f64, n: usize) -> Result<PenaltySpec> {
        Ok(PenaltySpec::ridge_rate(self.degree + self.inner_knots + 1, lambda_c, n)?)
    }

    pub fn t_values(&self) -> Vec<f64> {
        let denom = (self.t_points + 1) as f64;
        (1..=self.t_points).map(|j| j as f64 / denom).collect()
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.interval[0], self.interval[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.rows(), 20);
        assert_eq!(cfg.t_values().len(), 19);
        assert_eq!(cfg.t_values()[9], 0.5);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.dgp = 2;
        cfg.rho = Some(0.1);
        cfg.m = Some(15);
        cfg.lambda_c = vec![2.0];
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(back.kernel(), KernelSpec::ScaledDgp2(r) if r == 0.1));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("n = -3").is_err());
        let bad = [
            "dgp = 4",
            "dgp = 1\nrho = 0.1",
            "n = 0",
            "lambda_c = [-1.0]",
            "lambda_c = []",
            "s_eval = [1.0]",
            "interval = [0.5, 0.5]",
            "m = 1",
            "n = 900\nlattice_rows = 20",
        ];
        for text in bad {
            let cfg = RunConfig::from_toml_str(text).unwrap();
            let err = cfg.validate().unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }
}
