use thiserror::Error;

#[derive(Debug, Error)]
pub enum StefanError {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "degenerate Hanzawa transform at node (x index {ix}, z index {iz}): 1 + phi' rho = {value:.3e}"
    )]
    DegenerateTransform { ix: usize, iz: usize, value: f64 },

    #[error("linear solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error(
        "fixed-point iteration did not converge after {iterations} iterations \
         (last difference {last_difference:.3e}, contraction ratio {ratio:.3}); try a smaller dt"
    )]
    FixedPoint {
        iterations: usize,
        last_difference: f64,
        ratio: f64,
    },

    #[error("eigenvalue solve failed: {0}")]
    Eigen(String),

    #[error("insufficient history: {0}")]
    Unavailable(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("step {step} (t = {t:.6e}) failed: {source}")]
    Step {
        step: usize,
        t: f64,
        source: Box<StefanError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StefanError>;

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(StefanError::NonFinite { what, index }),
        None => Ok(()),
    }
}
