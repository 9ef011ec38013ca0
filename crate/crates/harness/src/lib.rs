//! Command-line driver for `fsar`: run configuration, CSV input and output,
//! the Monte Carlo runner and the file-based estimation pipeline.

pub mod config;
pub mod error;
pub mod io;
pub mod montecarlo;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
