//! Bayesian shrinkage estimation of subgroup treatment effects in randomized trials.
//!
//! Subgroup-by-treatment interactions are shrunk towards the overall effect with either a
//! normal prior with half-normal scale or a regularized horseshoe. Conditional model
//! coefficients are standardized into marginal subgroup effects (mean differences, odds
//! ratios, rate ratios and average hazard ratios) and can be compared against unadjusted
//! frequentist estimates on simulated trials.

// `!(x > 0.0)` is used deliberately so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod design;
pub mod engine;
pub mod error;
pub mod likelihoods;
pub mod math;
pub mod priors;
pub mod simlab;
pub mod standardize;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
