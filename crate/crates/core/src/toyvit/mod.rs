//! A small, randomly initialized Vision Transformer used as a reference model.
//!
//! Images are cut into non-overlapping patches, linearly embedded, given
//! learned positional embeddings and an optional CLS token, then passed
//! through pre-norm encoder blocks of multi-head self-attention and an MLP.
//! Each block can record its attention output (before the residual add) and
//! the token features after the residual add as `[grid_h, grid_w, d]` maps.

mod attention;
mod model;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapio::MapIoError;

pub use attention::{attention, attention_weights, softmax_rows};
pub use model::{encoder_block, forward, gelu_tanh, image_to_array, layer_norm, patchify, BlockTrace, ModelTrace, LN_EPS};
pub use weights::{BlockWeights, LayerNormParams, Linear, Weights, INDEX_FILE, INIT_STD};

#[derive(Debug, Error)]
pub enum ToyVitError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error{}: {what}", .block.map(|b| format!(" in block {b}")).unwrap_or_default())]
    Numeric { block: Option<usize>, what: String },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    MapIo(#[from] MapIoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub use_cls_token: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            embed_dim: 64,
            heads: 4,
            blocks: 4,
            mlp_ratio: 4,
            use_cls_token: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ToyVitError> {
        let err = |m: String| Err(ToyVitError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 {
            return err("image and patch size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return err(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return err(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.blocks == 0 || self.mlp_ratio == 0 {
            return err("blocks and mlp_ratio must be positive".into());
        }
        Ok(())
    }

    /// Tokens per side of the patch grid.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the CLS token if present.
    pub fn sequence_len(&self) -> usize {
        self.num_patches() + usize::from(self.use_cls_token)
    }

    /// Flattened length of one RGB patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Stable identifier written into run manifests.
    pub fn model_id(&self) -> String {
        format!(
            "toyvit-d{}-h{}-b{}-p{}-s{}",
            self.embed_dim, self.heads, self.blocks, self.patch_size, self.seed
        )
    }
}
