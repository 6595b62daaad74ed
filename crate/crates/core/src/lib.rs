//! Point and interval estimation of finite-population inequality measures
//! (Gini, Theil, Atkinson, quantiles and quantile ratios) from complex-survey
//! wealth data whose components are only known to lie in nonrectangular
//! censoring domains.
//!
//! The estimation engine is a three-stage hierarchy:
//!
//! 1. a normal approximation of the design-based estimator of each summary,
//!    `G = ĝ(t) + sqrt(v̂(t)) · E` with `E ~ N(0, 1)`;
//! 2. a pattern-mixture multivariate lognormal model for the held wealth
//!    components given covariates;
//! 3. a noninformative prior on the regression coefficients and on the
//!    per-pattern covariance matrices.
//!
//! A Gibbs sampler ([`gibbs`]) explores the joint posterior, drawing the
//! latent wealth components one at a time from truncated normals whose
//! truncation intervals come from the censoring engine ([`censoring`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod censoring;
pub mod data_model;
pub mod design_variance;
pub mod error;
pub mod gibbs;
pub mod hierarchy;
pub mod indices;
pub mod inference;
pub mod io;
pub mod pipeline;
pub mod synth;
pub mod variates;

pub use error::{Error, Result};

/// Crate version string embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
