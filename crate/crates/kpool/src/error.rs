//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by kernel evaluation, scoring, pooling, optimisation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("weight index space mismatch: expected {expected}, got {got}")]
    IndexSpaceMismatch { expected: String, got: String },

    #[error("ordered pooling requires univariate outcomes, got d = {0}")]
    OrderedRequiresUnivariate(usize),

    #[error("invalid kernel specification `{spec}`: {reason}")]
    KernelSpec { spec: String, reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig} below tolerance {tol}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("panel structure error for case `{case_id}`, model `{model_id}`: {reason}")]
    PanelStructure {
        case_id: String,
        model_id: String,
        reason: String,
    },

    #[error("{path}:{row}: {reason}")]
    FileFormat {
        path: String,
        row: usize,
        reason: String,
    },

    #[error("unsupported model file version `{0}` (expected 1)")]
    VersionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
