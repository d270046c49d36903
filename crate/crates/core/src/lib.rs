//! Plane-sweep multi-view stereo regularized by belief propagation on the
//! pixel grid, with an exact backward pass, coarse-to-fine refinement and
//! reprojection-checked point fusion.

// Validation code rejects NaN through negated comparisons such as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bp;
pub mod cli;
pub mod config;
pub mod costvol;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod verify;
pub mod volumes;

pub use error::{Error, Result};
