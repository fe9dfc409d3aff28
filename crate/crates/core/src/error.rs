//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("point lies outside the chart box (coordinate {index}: {value})")]
    OutsideChart { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("flow left the chart at t = {t_exit}")]
    FlowEscape { t_exit: f64 },

    #[error("frame fails the quaternionic relations (residual {residual:.3e})")]
    NotAdmissible { residual: f64 },

    #[error("connection does not preserve the quaternionic span (residual {residual:.3e})")]
    NotQuaternionic { residual: f64 },

    #[error("field is not quaternionic (residual {residual:.3e})")]
    FieldNotQuaternionic { residual: f64 },

    #[error("level-set projection failed after {iters} iterations (residual {residual:.3e})")]
    ProjectionFailed { iters: usize, residual: f64 },

    #[error("slice is degenerate: expected nullity {expected}, found {found}")]
    DegenerateSlice { expected: usize, found: usize },

    #[error("twistor-curvature gate failed at n = 1 (residual {residual:.3e})")]
    AsdGate { residual: f64 },

    #[error("model rejected: {0}")]
    Model(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
