use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{what} = {value} is outside {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("unit {unit}: observations at s = {s} have conflicting values")]
    DuplicateAbscissa { unit: usize, s: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("covariates {covariates:?} are collinear after partialling out the spatial lag")]
    CollinearCovariates { covariates: Vec<usize> },
    #[error("Neumann iteration produced non-finite values after {iters} steps")]
    Divergence { iters: usize },
    #[error("degenerate test: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;
