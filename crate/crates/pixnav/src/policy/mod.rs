//! The pixel-goal navigation network: goal-mask construction, goal and
//! observation encoders, goal fusion, a causal transformer decoder, and the
//! action / tracking / temporal-distance heads with the combined training
//! loss.

mod checkpoint;
mod loss;
mod mask;
mod model;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use loss::{compute_loss, loss_with_grads, EpisodeLabels, LossTerms, OutputGrads};
pub use mask::{build_goal_mask, frames_to_input, goal_input, GoalMask, RgbSource};
pub use model::{EpisodeCache, EpisodeOutputs, PixNavModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ConvEncoderConfig;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("goal pixel ({0}, {1}) out of image bounds")]
    PixelOutOfBounds(u32, u32),
    #[error("sequence of {len} frames exceeds the {max}-step horizon")]
    SequenceOverflow { len: usize, max: usize },
    #[error("episode must contain at least one frame")]
    EmptyEpisode,
    #[error("frame dims {got:?} do not match configured {want:?}")]
    DimMismatch { got: (u32, u32), want: (u32, u32) },
    #[error("loss undefined: batch contains no real steps")]
    AllPadded,
    #[error("label lengths do not match output lengths")]
    LabelMismatch,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedCheckpointVersion(u32),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-width of the goal-mask box; the mask is a (2*delta+1)^2 block of
/// ones clipped to the image.
pub const GOAL_MASK_DELTA: u32 = 2;
/// Temporal-distance regression targets are divided by this before the MSE.
pub const DISTANCE_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizePreset {
    Paper,
    Desk,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub preset: SizePreset,
    pub goal_token_dim: usize,
    pub obs_token_dim: usize,
    pub fusion_dim: usize,
    pub decoder_layers: usize,
    pub n_heads: usize,
    pub mlp_dim: usize,
    pub max_seq: usize,
    pub use_tracking_head: bool,
    pub use_distance_head: bool,
    pub use_goal_fusion: bool,
    /// Train the tracking head on clamped projections when the goal leaves
    /// the view; the default masks those steps out of the loss.
    pub track_invisible_targets: bool,
    pub frame_width: u32,
    pub frame_height: u32,
    pub goal_encoder: ConvEncoderConfig,
    pub obs_encoder: ConvEncoderConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::desk()
    }
}

impl PolicyConfig {
    /// Printed dimensions: 768-d goal token, 512-d observation tokens,
    /// 256-d fusion feature, 4 decoder layers, ~54.5M parameters.
    pub fn paper() -> Self {
        let resnet18 = |in_channels: usize, out_dim: usize| ConvEncoderConfig {
            in_channels,
            input_downsample: 1,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stages: vec![(64, 1, 2), (128, 2, 2), (256, 2, 2), (512, 2, 2)],
            out_dim,
        };
        PolicyConfig {
            preset: SizePreset::Paper,
            goal_token_dim: 768,
            obs_token_dim: 512,
            fusion_dim: 256,
            decoder_layers: 4,
            n_heads: 8,
            mlp_dim: 3072,
            max_seq: 64,
            use_tracking_head: true,
            use_distance_head: true,
            use_goal_fusion: true,
            track_invisible_targets: false,
            frame_width: 160,
            frame_height: 120,
            goal_encoder: resnet18(4, 768),
            obs_encoder: resnet18(3, 512),
        }
    }

    /// Same mechanisms with shrunken dims (192/128/64 tokens, small residual
    /// encoders, half-resolution input); trains on one CPU core.
    pub fn desk() -> Self {
        let small = |in_channels: usize, out_dim: usize| ConvEncoderConfig {
            in_channels,
            input_downsample: 2,
            stem_channels: 12,
            stem_kernel: 5,
            stem_stride: 4,
            stem_pool: false,
            stages: vec![(24, 2, 1), (48, 2, 1), (96, 2, 1)],
            out_dim,
        };
        PolicyConfig {
            preset: SizePreset::Desk,
            goal_token_dim: 192,
            obs_token_dim: 128,
            fusion_dim: 64,
            decoder_layers: 4,
            n_heads: 4,
            mlp_dim: 384,
            max_seq: 64,
            use_tracking_head: true,
            use_distance_head: true,
            use_goal_fusion: true,
            track_invisible_targets: false,
            frame_width: 160,
            frame_height: 120,
            goal_encoder: small(4, 192),
            obs_encoder: small(3, 128),
        }
    }

    /// Two-layer, 8-d-token configuration on 20x16 frames for gradient and
    /// equivalence tests.
    pub fn tiny() -> Self {
        let micro = |in_channels: usize, out_dim: usize| ConvEncoderConfig {
            in_channels,
            input_downsample: 1,
            stem_channels: 4,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            stages: vec![(4, 2, 1), (8, 2, 1)],
            out_dim,
        };
        PolicyConfig {
            preset: SizePreset::Tiny,
            goal_token_dim: 12,
            obs_token_dim: 8,
            fusion_dim: 4,
            decoder_layers: 2,
            n_heads: 2,
            mlp_dim: 16,
            max_seq: 8,
            use_tracking_head: true,
            use_distance_head: true,
            use_goal_fusion: true,
            track_invisible_targets: false,
            frame_width: 20,
            frame_height: 16,
            goal_encoder: micro(4, 12),
            obs_encoder: micro(3, 8),
        }
    }

    /// Decoder model width: observation tokens carry the fused goal feature
    /// when fusion is on; without fusion the goal rides as a prefix token of
    /// plain observation width.
    pub fn decoder_width(&self) -> usize {
        if self.use_goal_fusion {
            self.obs_token_dim + self.fusion_dim
        } else {
            self.obs_token_dim
        }
    }
}

/// Per-timestep policy outputs; auxiliary fields are absent when the
/// corresponding head is ablated away.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f32; 6],
    /// Predicted goal-pixel location in normalized [0,1]^2 coordinates.
    pub pixel: Option<(f32, f32)>,
    /// Predicted remaining steps to the goal.
    pub temporal_distance: Option<f32>,
}
