//! Multiply-accumulate counts. One MAC counts as one FLOP.

use super::model::keep_count;
use super::ModelConfig;

/// Patch embedding: every patch is projected to `embed_dim`.
pub fn embed_macs(cfg: &ModelConfig) -> u64 {
    (cfg.num_patches() * cfg.patch_dim() * cfg.embed_dim) as u64
}

/// One transformer block over `n` tokens: QKV projection, `QK^T`, `AV`,
/// output projection and the two MLP layers.
pub fn block_macs(n: usize, dim: usize, mlp_ratio: usize) -> u64 {
    let (n, d, r) = (n as u64, dim as u64, mlp_ratio as u64);
    n * d * 3 * d + 2 * n * n * d + n * d * d + 2 * n * d * (r * d)
}

/// Exit head on the summary token.
pub fn head_macs(cfg: &ModelConfig) -> u64 {
    let hh = cfg.head_hidden_dim() as u64;
    cfg.embed_dim as u64 * hh + hh * 2
}

/// Token count entering each block `1..=depth`.
pub fn tokens_per_block(cfg: &ModelConfig, depth: usize) -> Vec<usize> {
    let full = cfg.num_patches() + 1;
    let pruned = 1 + keep_count(cfg.num_patches(), 1.0 - cfg.prune_ratio);
    (1..=depth)
        .map(|b| {
            if cfg.prune_ratio > 0.0 && b > cfg.prune_after_block {
                pruned
            } else {
                full
            }
        })
        .collect()
}

/// MACs of a forward pass stopping at exit `depth`.
pub fn flops_estimate(cfg: &ModelConfig, depth: usize) -> u64 {
    assert!(depth >= 1 && depth <= cfg.depth, "depth {depth} outside 1..={}", cfg.depth);
    embed_macs(cfg)
        + tokens_per_block(cfg, depth)
            .into_iter()
            .map(|n| block_macs(n, cfg.embed_dim, cfg.mlp_ratio))
            .sum::<u64>()
        + head_macs(cfg)
}
