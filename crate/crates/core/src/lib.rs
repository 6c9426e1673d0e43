//! Downscaling coarse soil moisture with bagged regression trees.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod features;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scene_io;
pub mod seed;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
pub use matrix::FeatureMatrix;
