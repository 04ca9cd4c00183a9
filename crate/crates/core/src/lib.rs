//! Traffic-sign dataset tooling: annotation I/O, perspective rectification,
//! learned distortion models for synthetic augmentation, geo-clustered
//! splits, ROI sampling and detection evaluation.
//!
//! The `signkit` binary wraps these modules; see [`cli`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod appearance;
pub mod cli;
pub mod distortion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imageio;
pub mod model;
pub mod observe;
pub mod roi;
pub mod seed;
pub mod split;
pub mod synthesize;
pub mod toy;

pub use error::{Error, Result};
