//! Vision-transformer gaze regressor with attention-score token pruning and
//! early-exit heads.

pub mod checkpoint;
pub mod flops;
pub mod layers;
mod model;

pub use flops::flops_estimate;
pub use model::{
    keep_count, prune_tokens, select_tokens, AttentionScores, Block, ExitHead, ForwardTrace, GazeModel,
    GazePrediction, ModelInput, ModelView, TensorMut, TensorRef, TokenSet,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input is {got}x{got} but the model expects {expected}x{expected}")]
    WrongInputSize { got: usize, expected: usize },
    #[error("non-finite activation at block {block}")]
    NonFiniteActivation { block: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("depth {0} is not an exit block")]
    NotAnExit(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Transformer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_side: usize,
    pub patch_side: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_ratio: usize,
    /// Hidden width of each exit head; 0 means `embed_dim`.
    pub head_hidden: usize,
    /// Fraction of patch tokens dropped at the pruning point.
    pub prune_ratio: f64,
    /// 1-based block after which tokens are pruned.
    pub prune_after_block: usize,
    /// 1-based blocks carrying a gaze head. Always contains `depth`.
    pub exit_blocks: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale model: 32x32 input, 8x8 patches, two blocks of width 16.
    pub fn toy() -> Self {
        Self {
            image_side: 32,
            patch_side: 8,
            depth: 2,
            heads: 2,
            embed_dim: 16,
            mlp_ratio: 4,
            head_hidden: 0,
            prune_ratio: 0.0,
            prune_after_block: 2,
            exit_blocks: vec![2],
        }
    }

    /// 224x224 input, 16x16 patches, 8 blocks, 6 heads, width 384, exits at 3..=8.
    pub fn paper_scale() -> Self {
        Self {
            image_side: 224,
            patch_side: 16,
            depth: 8,
            heads: 6,
            embed_dim: 384,
            mlp_ratio: 4,
            head_hidden: 0,
            prune_ratio: 0.0,
            prune_after_block: 2,
            exit_blocks: (3..=8).collect(),
        }
    }

    pub fn grid(&self) -> usize {
        self.image_side / self.patch_side
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn head_hidden_dim(&self) -> usize {
        if self.head_hidden == 0 {
            self.embed_dim
        } else {
            self.head_hidden
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.patch_side == 0 || self.image_side == 0 || self.image_side % self.patch_side != 0 {
            return bad(format!(
                "image_side {} must be a positive multiple of patch_side {}",
                self.image_side, self.patch_side
            ));
        }
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return bad(format!("prune_ratio must lie in [0, 1), got {}", self.prune_ratio));
        }
        if self.prune_ratio > 0.0 && !(1..=self.depth).contains(&self.prune_after_block) {
            return bad(format!(
                "prune_after_block {} must lie in 1..={}",
                self.prune_after_block, self.depth
            ));
        }
        if self.exit_blocks.iter().any(|&e| e == 0 || e > self.depth) {
            return bad(format!("exit blocks {:?} must lie in 1..={}", self.exit_blocks, self.depth));
        }
        if !self.exit_blocks.contains(&self.depth) {
            return bad(format!("exit blocks {:?} must include the final block {}", self.exit_blocks, self.depth));
        }
        let mut sorted = self.exit_blocks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.exit_blocks {
            return bad(format!("exit blocks {:?} must be strictly increasing", self.exit_blocks));
        }
        Ok(())
    }

    /// Whether pruning happens inside a run that stops after block `depth`.
    pub fn prunes_within(&self, depth: usize) -> bool {
        self.prune_ratio > 0.0 && self.prune_after_block < depth
    }
}
