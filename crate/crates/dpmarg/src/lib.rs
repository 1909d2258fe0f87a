//! Differentially private release of marginal tables.
//!
//! The crate answers a workload of marginal queries over a discrete-domain
//! dataset under a Gaussian noise budget. It works in three phases:
//!
//! 1. **Select** ([`planner`]) — choose one noise scale per residual query
//!    set in the downward closure of the workload, minimizing either a
//!    weighted sum of per-cell variances or the maximum weighted variance,
//!    subject to a privacy-cost budget. Both problems are solved exactly
//!    (closed form) or to certified tolerance (interior point).
//! 2. **Measure** ([`mechanism`]) — answer each residual query on the data
//!    with calibrated Gaussian noise. Residual queries for distinct
//!    attribute sets are mutually orthogonal, which is what makes the
//!    per-set accounting additive and the reconstruction exact.
//! 3. **Reconstruct** ([`reconstruct`]) — combine noisy residuals into
//!    unbiased marginal estimates, with exact per-cell variances and
//!    pairwise covariances reported alongside.
//!
//! [`accounting`] converts the plan's privacy cost into zCDP, Gaussian-DP,
//! and (ε, δ) guarantees, and calibrates budgets in the reverse direction.
//! [`oracle`] holds slow dense reference implementations used by the test
//! suites; it is compiled unconditionally but guarded to toy sizes.
//!
//! Everything is deterministic given a master seed, and all linear algebra
//! on data vectors streams through implicit Kronecker factorizations — no
//! matrix over the full universe is ever materialized outside the oracle.

pub mod accounting;
pub mod error;
pub mod kronop;
pub mod mechanism;
pub mod oracle;
pub mod planner;
pub mod reconstruct;
pub mod schema;

pub use error::{Error, Result};

/// Crate version, re-exported for CLI output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
