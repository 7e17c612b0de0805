//! Learned local realism metric for LiDAR-style point clouds.
//!
//! The crate is organised bottom-up:
//!
//! - [`cloud`]: the point-cloud type and its file formats.
//! - [`pcgen`]: procedural scan generation for the Real / Synthetic / Misc
//!   categories plus controlled distortions.
//! - [`spatial`]: farthest-point sampling, k-nearest-neighbour search and
//!   neighbourhood grouping with permutation-invariant tie-breaking.
//! - [`net`]: the hierarchical point-set feature extractor, classifier and
//!   adversary heads, gradient reversal, losses, Adam and checkpoints.
//! - [`train`]: adversarial proxy-classification training and λ sweeps.
//! - [`score`]: per-query and per-scene realism scores, anomaly maps and the
//!   latent-feature probe.
//! - [`eval`]: range-image projection, bilinear up-sampling, Chamfer and
//!   masked reconstruction errors, noise sweeps.
//! - [`config`]: the `key = value` run configuration format.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cloud;
pub mod config;
pub mod error;
pub mod eval;
pub mod net;
pub mod pcgen;
pub mod rng;
pub mod score;
pub mod spatial;
pub mod train;

pub use cloud::{Category, Point, PointCloud, Provenance};
pub use error::{Error, Result};
