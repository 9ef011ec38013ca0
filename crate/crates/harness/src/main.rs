use clap::{Args, Parser, Subcommand};
use fsar_harness::config::RunConfig;
use fsar_harness::error::{HarnessError, Result};
use fsar_harness::{montecarlo, pipeline};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulate, estimate and test functional spatial autoregressive models.
#[derive(Parser, Debug)]
#[command(name = "fsar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one dataset and write it as CSV input files.
    Simulate(Overrides),
    /// Estimate coefficients, the spatial kernel and tests from CSV inputs.
    Estimate(Overrides),
    /// Run only the Wald tests from CSV inputs.
    Test(Overrides),
    /// Run a Monte Carlo experiment.
    Montecarlo(Overrides),
}

/// Flags override values read from `--config`, which override defaults.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML file with run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dgp: Option<u8>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lattice_rows: Option<usize>,
    #[arg(long)]
    lattice_cols: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    inner_knots: Option<usize>,
    #[arg(long)]
    max_iv_order: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lambda_c: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    s_eval: Option<Vec<f64>>,
    #[arg(long)]
    t_points: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    first_replication: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    interval: Option<Vec<f64>>,
    #[arg(long)]
    neumann_tol: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Exclude failed replications instead of aborting.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    threads: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $( if let Some(v) = $o.$field.clone() { $cfg.$field = v; } )*
    };
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let o = self;
        apply!(
            cfg,
            o,
            dgp,
            n,
            lattice_cols,
            grid_size,
            degree,
            inner_knots,
            max_iv_order,
            lambda_c,
            s_eval,
            t_points,
            replications,
            first_replication,
            seed,
            neumann_tol,
            output
        );
        if o.rho.is_some() {
            cfg.rho = o.rho;
        }
        if o.lattice_rows.is_some() {
            cfg.lattice_rows = o.lattice_rows;
        }
        if o.m.is_some() {
            cfg.m = o.m;
        }
        if o.data_dir.is_some() {
            cfg.data_dir = o.data_dir.clone();
        }
        if o.threads.is_some() {
            cfg.threads = o.threads;
        }
        if let Some(iv) = &o.interval {
            cfg.interval = [iv[0], iv[1]];
        }
        cfg.lenient |= o.lenient;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(o) => {
            let cfg = o.resolve()?;
            let dir = pipeline::run_simulate(&cfg)?;
            println!("wrote simulated data to {}", dir.display());
        }
        Command::Estimate(o) => {
            let cfg = o.resolve()?;
            let run = pipeline::run_estimate(&cfg)?;
            for t in &run.tests {
                println!("s = {}: T = {:.4}, z = {:.4}, p = {:.4}", t.s, t.statistic, t.z, t.p_value);
            }
            println!("wrote estimates to {}", cfg.output.display());
        }
        Command::Test(o) => {
            let cfg = o.resolve()?;
            let run = pipeline::run_test(&cfg)?;
            for t in &run.tests {
                println!("s = {}: T = {:.4}, z = {:.4}, p = {:.4}", t.s, t.statistic, t.z, t.p_value);
            }
        }
        Command::Montecarlo(o) => {
            let cfg = o.resolve()?;
            let report = montecarlo::run_montecarlo(&cfg)?;
            montecarlo::write_report(&cfg.output, &cfg, &report)?;
            for p in &report.points {
                println!("s = {}: beta BIAS {:.4} RMSE {:.4}", p.s, p.beta_bias, p.beta_rmse);
                for c in &p.cells {
                    println!(
                        "  lambda_c = {}: alpha BIAS {:.4} RMSE {:.4}, rejection {:.3} {:.3} {:.3}",
                        c.lambda_c, c.alpha_bias, c.alpha_rmse, c.rejection[0], c.rejection[1], c.rejection[2]
                    );
                }
            }
            println!(
                "{} replications ({} failed) in {:.1}s",
                report.replications,
                report.failures,
                report.wall_time.as_secs_f64()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &HarnessError) -> u8 {
    e.exit_code() as u8
}
