//! Estimation of distal causal excursion effects in micro-randomized trials.
//!
//! A micro-randomized trial (MRT) randomizes a treatment at many decision
//! points per person and records a single end-of-study outcome. This crate
//! estimates how single-point excursions from the trial's policy — treat at
//! one decision point (when eligible) versus withhold there, following the
//! policy everywhere else — move that distal outcome, and how the effect
//! varies with time and chosen moderators.
//!
//! The pieces:
//!
//! - [`data`]: long-format dataset type, CSV IO, validation.
//! - [`features`]: estimand specification — effect-modification features
//!   f(t, S_t) and decision-point weights.
//! - [`nuisance`]: working models for E\[Y | history, arm\] and cross-fitting
//!   folds.
//! - [`estimator`]: the weighted-projection estimator with its
//!   nuisance-robust estimating function and sandwich variance.
//! - [`simulator`]: generative models for testing and benchmarking, plus a
//!   brute-force Monte Carlo oracle for the true projection coefficients.
//! - [`comparators`]: conventional GEE and proximal-effect (WCLS) baselines
//!   that are *not* consistent for the distal estimand, for contrast.
//! - [`benchmark`]: replicated simulation studies (bias, SE calibration,
//!   coverage) across estimators and sample sizes.
//!
//! Randomness is fully deterministic given seeds ([`rng`]), and the
//! data-parallel paths ([`parallel`]) produce byte-identical results
//! regardless of thread count or whether the `parallel` feature is enabled.

pub mod benchmark;
pub mod comparators;
pub mod data;
pub mod error;
pub mod estimator;
pub mod features;
pub mod linalg;
pub mod nuisance;
pub mod parallel;
pub mod rng;
pub mod simulator;
pub mod spline;

pub use error::{Error, Result};
