use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensionality of every goal space.
pub const LATENT_DIM: usize = 16;
/// Spatial extent of the innermost feature map.
pub const BOTTLENECK: usize = 4;
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;

/// Shape of one encoder/decoder pair. The number of stride-2 convolutions is
/// whatever brings `input_size` down to a 4x4 bottleneck (6 for 256x256).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub channels: usize,
    pub hidden: usize,
}

impl Architecture {
    /// Small per-node module: 8 feature maps, 64-unit dense layers.
    pub fn core(input_size: usize) -> Self {
        Self {
            input_size,
            channels: 8,
            hidden: 64,
        }
    }

    /// High-capacity single-space VAE: 32 feature maps, 256-unit dense layers.
    pub fn monolithic(input_size: usize) -> Self {
        Self {
            input_size,
            channels: 32,
            hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input_size;
        if s < 2 * BOTTLENECK || !s.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "input size {s} must be a power of two >= {}",
                2 * BOTTLENECK
            )));
        }
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("empty layer widths".into()));
        }
        Ok(())
    }

    pub fn n_conv(&self) -> usize {
        (self.input_size / BOTTLENECK).trailing_zeros() as usize
    }

    pub fn flat_features(&self) -> usize {
        self.channels * BOTTLENECK * BOTTLENECK
    }

    /// Spatial extent after encoder conv `i` (1-based); the decoder's
    /// transpose conv `n - i` produces the same extent.
    pub fn extent_after_conv(&self, i: usize) -> usize {
        self.input_size >> i
    }

    /// Index of the decoder feature map used as the "global" tap: the output
    /// of transpose conv `n - 3` (the 3rd of 6 at full size). 0 denotes the
    /// reshaped dense output feeding the first transpose conv.
    pub fn global_tap(&self) -> usize {
        self.n_conv().saturating_sub(3)
    }

    /// Decoder feature map used as the "local" tap: the input of the last
    /// transpose conv.
    pub fn local_tap(&self) -> usize {
        self.n_conv() - 1
    }

    /// Extent of decoder feature map `i` (0 = reshaped dense output).
    pub fn decoder_extent(&self, i: usize) -> usize {
        BOTTLENECK << i
    }
}
