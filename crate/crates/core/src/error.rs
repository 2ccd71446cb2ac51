use thiserror::Error;

/// Errors produced by the pricing library.
#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter or argument lies outside the domain where the
    /// quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training produced a non-finite loss. `component` names the residual
    /// term that blew up first.
    #[error("non-finite loss at epoch {epoch}, step {step}: {component} = {value}")]
    NonFinite {
        epoch: usize,
        step: usize,
        component: &'static str,
        value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
