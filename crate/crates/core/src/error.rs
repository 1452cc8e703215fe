use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("blackbody cutoff {cutoff} exceeds the causality bound 1/tau_bb = {bound}")]
    CausalityViolation { cutoff: f64, bound: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("model is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("unphysical state: {0}")]
    Unphysical(String),

    #[error("duplicate bath label `{0}`")]
    DuplicateLabel(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("quadrature did not converge: last change {achieved:e} above {target:e} at order {order}")]
    QuadratureNotConverged {
        achieved: f64,
        target: f64,
        order: usize,
    },

    #[error("Fock truncation leakage {leakage:e} exceeds {limit:e}")]
    TruncationLeakage { leakage: f64, limit: f64 },

    #[error("effective frequency undefined: (2/hbar) sqrt(<q^2><p^2>) = {0} must exceed 1")]
    ArccothDomain(f64),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn ensure_finite(field: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::param(field, format!("must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(field: &str, value: f64) -> Result<f64> {
    ensure_finite(field, value)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::param(field, format!("must be positive, got {value}")))
    }
}
