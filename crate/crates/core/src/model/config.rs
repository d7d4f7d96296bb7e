use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Shape and switches of the SA-CT network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames per video (L).
    pub frames: usize,
    /// Patches per grid row (P); a frame has P² patches.
    pub patches_per_side: usize,
    /// Channels per patch (D).
    pub channels: usize,
    /// Attention embedding width (d_k); the temperature is √d_k.
    pub d_k: usize,
    /// Value width (d_v); defaults to d_k.
    pub d_v: Option<usize>,
    pub use_tmixer: bool,
    pub use_cpe: bool,
    /// Power of the frame count in the distance normaliser, 1 or 2.
    pub frame_norm_exponent: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            patches_per_side: 7,
            channels: 32,
            d_k: 64,
            d_v: None,
            use_tmixer: true,
            use_cpe: true,
            frame_norm_exponent: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.frames == 0 {
            return fail("frames must be at least 1".into());
        }
        if self.use_tmixer && (self.frames < 2 || self.frames % 2 != 0) {
            return fail(format!(
                "the temporal mixer halves the frame count, so frames must be even (got {})",
                self.frames
            ));
        }
        if self.patches_per_side == 0 || self.channels == 0 || self.d_k == 0 || self.value_dim() == 0 {
            return fail("patches_per_side, channels, d_k and d_v must all be at least 1".into());
        }
        if !matches!(self.frame_norm_exponent, 1 | 2) {
            return fail(format!(
                "frame_norm_exponent must be 1 or 2 (got {})",
                self.frame_norm_exponent
            ));
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        self.patches_per_side * self.patches_per_side
    }

    pub fn value_dim(&self) -> usize {
        self.d_v.unwrap_or(self.d_k)
    }

    /// Frame count seen by the attention stage.
    pub fn attended_frames(&self) -> usize {
        if self.use_tmixer {
            self.frames / 2
        } else {
            self.frames
        }
    }

    /// `[frames, patches, channels]` expected of every input video.
    pub fn video_shape(&self) -> [usize; 3] {
        [self.frames, self.patches(), self.channels]
    }

    pub fn temperature(&self) -> f64 {
        (self.d_k as f64).sqrt()
    }
}
