//! Numerical core for covariate-shift aware predictive uncertainty.
//!
//! The pieces, bottom-up:
//!
//! * [`nn`]: dense networks with exact backprop, finite-difference checks
//!   and plain gradient steps.
//! * [`model`]: datasets, the pretrained embedding `g`, the affine head and
//!   its likelihoods, set aggregation.
//! * [`prior`]: the covariate-conditioned energy prior over head parameters.
//! * [`posterior`]: the amortized diagonal-Gaussian posterior produced by an
//!   inference network, and its single-sample ELBO.
//! * [`environments`]: bootstrap synthetic environments, the
//!   variance-penalized cross-environment objective, training and prediction.
//! * [`theory`]: binned distributions and the method-of-types calculator for
//!   how many environments are needed to cover an unseen shift.
//! * [`data`]: synthetic generators, k-means shift split, standardization.
//! * [`metrics`]: RMSE, accuracy, adaptive calibration error, spread profiles.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the
//! command-line front-end live in the `vids` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod environments;
mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
