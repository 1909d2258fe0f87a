//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by schema validation, operator algebra, planning,
/// measurement, and reconstruction.
#[derive(Debug, Error)]
pub enum Error {
    /// A schema failed validation (domain size < 2, duplicate names, ...).
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    /// An attribute set refers to attributes outside the schema, or is
    /// too large to materialize the requested object.
    #[error("invalid attribute set: {0}")]
    InvalidAttrSet(String),

    /// A workload failed validation (duplicate marginals, bad weights, ...).
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    /// A dataset record is inconsistent with the schema.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An operator was applied to a vector of the wrong length.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A reconstruction source set is not contained in the target set.
    #[error("attribute set {subset} is not a subset of {superset}")]
    NotSubset { subset: String, superset: String },

    /// Reconstruction was asked for a marginal whose residual measurements
    /// are incomplete.
    #[error("missing residual measurement for {0}")]
    MissingResidual(String),

    /// The dense oracle refuses instances above its size guard.
    #[error("instance too large for the dense oracle: {cells} cells exceeds the {limit}-cell guard")]
    TooLargeForDense { cells: u128, limit: u128 },

    /// A plan is inconsistent with the model or workload it is used with.
    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    /// A privacy budget or calibration target is out of range.
    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    /// An iterative solver failed to converge; the message carries the
    /// residual diagnostics at the point of failure.
    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
