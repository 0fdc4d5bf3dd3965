//! Multimodality probing for twin-pair Gaussian mixture likelihoods.
//!
//! The pipeline samples the high-likelihood region with a No-U-Turn sampler,
//! restarts a box-constrained quasi-Newton optimizer from every retained
//! draw, and clusters the resulting optima.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod explorer;
pub mod model;
pub mod nuts;
pub mod objective;
pub mod optim;
pub mod params;
pub mod sampler;

pub use error::{Error, Result};
