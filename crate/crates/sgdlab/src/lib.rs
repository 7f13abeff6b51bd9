//! Minibatch SGD and local SGD on synthetic problems with analytically known
//! constants. The library measures on-average model stability, generalization
//! gap, optimization gap and excess risk through coupled neighboring-dataset
//! runs, evaluates the corresponding theoretical bounds, and fits scaling
//! exponents for the linear-speedup recipes.
//!
//! Module map:
//! - [`problems`]: loss families (least squares, logistic, ridge, rank-deficient
//!   quadratic) with exact smoothness/convexity constants and data generators.
//! - [`sampling`]: hierarchically derivable random streams and with-replacement
//!   minibatch draws, including the index-count reformulation.
//! - [`optimizers`]: minibatch SGD and local SGD trainers with step-size
//!   schedules and averaging schemes.
//! - [`stability`]: neighboring-dataset families and coupled-run estimators of
//!   l1/l2 on-average model stability.
//! - [`bounds`]: evaluators for every stability/generalization/optimization
//!   bound, producing auditable reports.
//! - [`experiments`]: risk decomposition, speedup sweeps, scaling-exponent
//!   fits and inequality verdicts.
//! - [`suites`]: the named verification suites run by the CLI and the
//!   acceptance tests.

pub mod bounds;
pub mod cli;
pub mod experiments;
pub mod optimizers;
pub mod problems;
pub mod sampling;
pub mod stability;
pub mod suites;

/// Library-level error type. Contract violations (caller bugs such as
/// dimension mismatches or out-of-range indices) panic instead; `Error`
/// covers recoverable configuration, input and I/O failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
