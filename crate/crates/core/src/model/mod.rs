//! Deterministic reference implementation of the redshift inference head:
//! patch embedding and masking mechanics, a frozen pre-norm transformer
//! encoder, an inception branch, a magnitude block, and the fusion head,
//! plus MSE/MAE metrics.
//!
//! Every operation is a pure function of (inputs, weights, seed). Dot
//! products accumulate in 64-bit floats over a fixed lane layout, so results
//! are bit-identical regardless of batch size or partition boundaries.

mod encoder;
mod heads;
mod inception;
mod linalg;
mod metrics;
mod pipeline;
mod weights;

pub use encoder::{embed_mask_shuffle, encode, patchify, unpatchify, MaskSelection};
pub use heads::{fusion_head, magnitude_features, FeatureBundle};
pub use inception::inception_features;
pub use metrics::{metrics, MetricAccumulator, Metrics};
pub use pipeline::{feature_bundle, predict_batch, predict_record};
pub use weights::{
    load_model, load_weights, save_model, save_weights, synth_weights, tensor_specs, Tensor,
    WeightSet,
};

use serde::{Deserialize, Serialize};

use crate::dataset::{CHANNELS, HEIGHT, WIDTH};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: String,
        expected: String,
        actual: String,
    },
    #[error("mask ratio {0} must lie in [0,1) and keep an integral patch count")]
    InvalidMaskRatio(f32),
    #[error("non-finite value in weight tensor {0}")]
    NonFiniteWeights(String),
    #[error("missing weight tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {actual:?} on load, expected {expected:?}")]
    ShapeMismatchOnLoad {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("corrupt weight archive: {0}")]
    CorruptArchive(String),
    #[error("predictions and targets differ in length: {predictions} vs {targets}")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("metrics over an empty input")]
    EmptyInput,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

/// Dimensions of the inference head. Defaults match the reference setup:
/// 5x8x8 patches embedded into 192 dimensions over a 4x4 patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// (channels, patch height, patch width).
    pub patch_shape: (usize, usize, usize),
    pub embed_dim: usize,
    pub encoder_blocks: usize,
    pub attention_heads: usize,
    pub encoder_out: usize,
    pub inception_out: usize,
    pub magnitude_out: usize,
    pub branch_hidden: usize,
    pub branch_out: usize,
    pub fusion_hidden: usize,
    /// Fraction of patch embeddings masked on the pretraining path. The
    /// inference path always consumes the full patch set.
    pub mask_ratio: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_shape: (CHANNELS, 8, 8),
            embed_dim: 192,
            encoder_blocks: 2,
            attention_heads: 4,
            encoder_out: 192,
            inception_out: 32,
            magnitude_out: 16,
            branch_hidden: 128,
            branch_out: 64,
            fusion_hidden: 64,
            mask_ratio: 0.75,
        }
    }
}

impl ModelConfig {
    /// Values per flattened patch (channels x ph x pw).
    pub fn patch_dim(&self) -> usize {
        let (c, h, w) = self.patch_shape;
        c * h * w
    }

    /// Patches per image over the (HEIGHT/ph) x (WIDTH/pw) grid.
    pub fn patch_count(&self) -> usize {
        let (_, h, w) = self.patch_shape;
        (HEIGHT / h) * (WIDTH / w)
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        let (_, h, w) = self.patch_shape;
        (HEIGHT / h, WIDTH / w)
    }

    /// Hidden width of the encoder MLP (conventional 4x expansion).
    pub fn mlp_hidden(&self) -> usize {
        4 * self.embed_dim
    }

    /// Width of the fusion concat: magnitude_out + 2 x branch_out.
    pub fn fusion_in(&self) -> usize {
        self.magnitude_out + 2 * self.branch_out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (c, ph, pw) = self.patch_shape;
        let err = |msg: String| Err(ModelError::InvalidConfig(msg));
        if c != CHANNELS {
            return err(format!("patch channels {c} must equal image channels {CHANNELS}"));
        }
        if ph == 0 || pw == 0 || HEIGHT % ph != 0 || WIDTH % pw != 0 {
            return err(format!("patch {ph}x{pw} must divide the {HEIGHT}x{WIDTH} image"));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("encoder_out", self.encoder_out),
            ("inception_out", self.inception_out),
            ("magnitude_out", self.magnitude_out),
            ("branch_hidden", self.branch_hidden),
            ("branch_out", self.branch_out),
            ("fusion_hidden", self.fusion_hidden),
            ("attention_heads", self.attention_heads),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        if self.embed_dim % self.attention_heads != 0 {
            return err(format!(
                "attention heads {} must divide embed_dim {}",
                self.attention_heads, self.embed_dim
            ));
        }
        if self.inception_out % 4 != 0 {
            return err(format!(
                "inception_out {} must split across 4 paths",
                self.inception_out
            ));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(ModelError::InvalidMaskRatio(self.mask_ratio));
        }
        Ok(())
    }
}
