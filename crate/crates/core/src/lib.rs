//! Expected prediction-set size for split conformal prediction.
//!
//! The crate covers the whole path from calibration scores to a size figure:
//!
//! - [`conformal`]: acceptance threshold, prediction sets and coverage trials.
//! - [`special`]: log-gamma, incomplete beta, binomial and beta-binomial laws.
//! - [`factor`]: multiplicative factors translating label measure into score measure.
//! - [`size`]: the exact expected-size integral over step tilde-CDFs and its conditionals.
//! - [`estimate`]: empirical point estimates and DKW interval estimates.
//! - [`baseline`]: Monte Carlo averages and concentration-inequality intervals.
//! - [`synthetic`]: the beta-binomial validation model and its parameter grid.
//! - [`scorer`]: non-conformity functions, toy predictors and score matrices.
//!
//! Data-parallel loops (Monte Carlo runs, grid cells, matrix rows) go through
//! [`Execution`]. With the `parallel` feature (on by default) they run on rayon;
//! without it every loop runs sequentially. Results are bit-identical either way.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod conformal;
pub mod error;
pub mod estimate;
mod exec;
pub mod factor;
pub mod scorer;
pub mod size;
pub mod special;
mod sum;
pub mod synthetic;

pub use conformal::{ScoreSample, Threshold};
pub use error::{Error, Result};
pub use estimate::{DkwRadius, SizeEstimate};
pub use exec::{derive_seed, seeded_rng, Execution, SeededRng};
pub use factor::FactorSpec;
pub use scorer::ScoreMatrix;
pub use size::StepTildeCdf;
pub use sum::{compensated_sum, CompensatedSum};
