//! Consistency-filtered self-training for iterative stereo disparity estimation.
//!
//! A teacher model predicts disparity for unlabeled stereo pairs; per-pixel
//! reliability weights are derived from how consistent those predictions are
//! across input resolutions and across refinement iterations; a student is
//! trained on the weighted pseudo-labels and periodically folded back into
//! the teacher by a delayed exponential moving average.
//!
//! The crate ships a small differentiable recurrent stereo network
//! ([`model`]) that exposes the same surface large iterative backbones do
//! (a per-iteration prediction trace, arbitrary-resolution inference), so
//! the whole loop runs on a desktop CPU.
//!
//! # Feature flags
//! - `parallel` (default): data-parallel kernels via rayon. Disabling it
//!   leaves every code path sequential; results are bit-identical either way.
//!
//! # Crate layout
//! - [`types`]: images, disparity maps, masks, prediction traces
//! - [`resize`]: bilinear resampling for images and disparity fields
//! - [`filters`]: consistency statistics, soft thresholding, weighted loss
//! - [`model`]: the recurrent stereo network and its training losses
//! - [`augment`]: strong photometric augmentations for the student input
//! - [`selftrain`]: pretraining, the self-training loop, EMA refresh
//! - [`synth`]: procedural stereo pairs with exact ground truth
//! - [`io`]: PFM / 16-bit PNG codecs, manifests, checkpoints, heatmaps
//! - [`metrics`]: disparity error metrics and rank-correlation analysis

pub mod augment;
pub mod error;
pub mod exec;
pub mod filters;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod resize;
pub mod selftrain;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
