//! Procedural synthesis of labeled head/brain volumes.
//!
//! A sample is built from nested random ellipsoids (skull shell, brain,
//! small artifacts), warped by a smooth random displacement field, painted
//! with piecewise Gaussian intensities and labeled as background, brain and
//! a boundary band around the brain. The crate also provides the mask
//! post-processing and metrics used to score segmentations, NIfTI-1 I/O, an
//! offline dataset writer and a socket sample server.

// `!(x >= 0.0)` deliberately rejects NaN; per-axis index loops read best in
// voxel code.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dataset;
pub mod deform;
pub mod error;
pub mod geometry;
pub mod intensity;
pub mod labels;
pub mod metrics;
pub mod nifti;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod stream;
pub mod transform;
pub mod volume;

pub use config::GeneratorConfig;
pub use error::{Error, Result};
pub use pipeline::{generate_sample, Sample};
pub use volume::{Dims, Label, LabelVolume, MaskVolume, ScalarVolume, Volume};
