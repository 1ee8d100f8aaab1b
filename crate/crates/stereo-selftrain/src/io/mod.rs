//! File formats: disparity codecs, dataset manifests, checkpoints,
//! heatmaps, and the metrics log.

pub mod checkpoint;
pub mod heatmap;
pub mod kitti_png;
pub mod manifest;
pub mod metrics_log;
pub mod pfm;
pub mod png_image;
