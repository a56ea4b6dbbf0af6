//! Nonparametric deep clustering engine.
//!
//! Infers the number of clusters K during training by combining
//! Dirichlet-process GMM split/merge moves (Hastings acceptance over
//! Normal-Inverse-Wishart marginal likelihoods) with an amortized EM
//! procedure in which a small soft-assignment network with a resizable
//! output layer replaces the E-step.
//!
//! The engine consumes precomputed feature vectors; it does no feature
//! learning of its own. Typical entry points:
//!
//! - [`fit::Trainer`] drives the full nonparametric fit,
//! - [`em::em_oracle`] runs the classical Bayesian EM baseline,
//! - [`data::generate_gmm`] produces synthetic benchmark mixtures,
//! - [`metrics`] evaluates a clustering against ground truth.

// Index-based loops are the house style for the numeric kernels, and
// `!(x > 0.0)` guards intentionally treat NaN as out of domain.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod em;
pub mod error;
pub mod fit;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod niw;
pub mod numerics;
pub mod split_merge;

pub use error::{Error, Result};
