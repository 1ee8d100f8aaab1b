//! Model architecture configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search radius of the correlation lookup, in quarter-resolution pixels.
pub const CORR_RADIUS: usize = 4;
/// Channels of the disparity encoding fed to the update cell.
pub const DISP_ENC_CHANNELS: usize = 8;
/// Outputs are clamped to `[0, max_disparity * DISPARITY_MARGIN]`.
pub const DISPARITY_MARGIN: f64 = 1.5;
/// Input images are RGB.
pub const IN_CHANNELS: usize = 3;

/// Architecture hyperparameters of the recurrent stereo network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_channels: usize,
    pub hidden_channels: usize,
    /// Resolution reduction of the matching grid; 2 or 4.
    pub downsample_factor: usize,
    /// Default refinement iteration count.
    pub n_iters: usize,
    /// Largest representable disparity, in full-resolution pixels.
    pub max_disparity: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_channels: 32,
            hidden_channels: 48,
            downsample_factor: 4,
            n_iters: 8,
            max_disparity: 64.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters < 2 {
            return Err(Error::invalid(format!(
                "n_iters must be at least 2, got {}",
                self.n_iters
            )));
        }
        if self.downsample_factor != 2 && self.downsample_factor != 4 {
            return Err(Error::invalid(format!(
                "downsample_factor must be 2 or 4, got {}",
                self.downsample_factor
            )));
        }
        if self.feature_channels < 4 || self.feature_channels % 2 != 0 {
            return Err(Error::invalid(format!(
                "feature_channels must be even and at least 4, got {}",
                self.feature_channels
            )));
        }
        if self.hidden_channels < 4 {
            return Err(Error::invalid(format!(
                "hidden_channels must be at least 4, got {}",
                self.hidden_channels
            )));
        }
        if !(self.max_disparity > 0.0) {
            return Err(Error::invalid(format!(
                "max_disparity must be positive, got {}",
                self.max_disparity
            )));
        }
        Ok(())
    }

    /// Context channels handed to the update cell alongside correlation
    /// and disparity-encoding features.
    pub fn context_channels(&self) -> usize {
        self.feature_channels / 2
    }

    /// Hidden width of the disparity head.
    pub fn head_channels(&self) -> usize {
        self.feature_channels / 2
    }

    /// Channels of the update cell's non-hidden input stack.
    pub fn gru_input_channels(&self) -> usize {
        (2 * CORR_RADIUS + 1) + DISP_ENC_CHANNELS + self.context_channels()
    }
}
