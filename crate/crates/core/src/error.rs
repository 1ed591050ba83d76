use std::path::PathBuf;

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{0}")]
    Shape(String),

    #[error("empty batch for {0}")]
    EmptyBatch(&'static str),

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error(
        "inner solve diverged for group {group}: loss rose from {start:.3e} to {now:.3e} at step {step}; \
         try a smaller inner_lr"
    )]
    InnerDivergence {
        group: u8,
        start: f64,
        now: f64,
        step: usize,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(
        "conjugate gradient hit a non-finite value at iteration {iteration} (pᵀAp = {curvature:.3e}); \
         the operator is likely indefinite, raise hessian_damping"
    )]
    CgBreakdown { iteration: usize, curvature: f64 },

    #[error("non-finite component {index} in gradient term `{term}`")]
    NonFiniteGradient { term: &'static str, index: usize },

    #[error("{0}")]
    Metric(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Oracle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
