//! Closed-form forward FLOP accounting for one sample (L views).
//!
//! Convention: one multiply-accumulate = 2 FLOPs. Per encoder block over
//! N tokens of width D with MLP ratio r:
//!
//!   projections (q, k, v, output):  4 matmuls [N,D]x[D,D]   -> 8 N D^2
//!   attention scores Q K^T:         N^2 d per head, M heads -> 2 N^2 D
//!   attention apply  A V:           same                    -> 2 N^2 D
//!   MLP:                            [N,D]x[D,rD] twice      -> 4 N D rD
//!
//! A local block runs on n tokens once per view (L applications); a global
//! block runs once on L*n tokens. Elementwise work (bias adds, LN, GELU,
//! softmax normalization, residuals) is excluded: it is O(N D) against the
//! O(N D^2) matmul terms and identical across the compared stages.

use crate::model::MVTConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounts {
    /// One local block applied to one view (n tokens).
    pub local_block_per_view: u64,
    /// One local block across all L views.
    pub local_block: u64,
    /// One global block (L*n tokens).
    pub global_block: u64,
    /// Score + apply terms (the 4 N^2 D part) of one local block across
    /// all L views.
    pub local_block_scores: u64,
    /// Score + apply terms of one global block.
    pub global_block_scores: u64,
    /// S local blocks across all views.
    pub local_total: u64,
    /// T global blocks.
    pub global_total: u64,
    /// Patch embedding: L*wh rows through the [Cp^2, D] projection.
    pub embed: u64,
    /// Classifier head on the pooled vector.
    pub head: u64,
    /// embed + local_total + global_total + head.
    pub total: u64,
}

fn block_flops(tokens: u64, dim: u64, ratio: u64) -> u64 {
    8 * tokens * dim * dim + 4 * tokens * tokens * dim + 4 * tokens * dim * ratio * dim
}

fn score_flops(tokens: u64, dim: u64) -> u64 {
    4 * tokens * tokens * dim
}

/// FLOPs of one forward pass under the convention documented above.
pub fn attention_flops(config: &MVTConfig) -> FlopCounts {
    let n = config.tokens_per_view() as u64;
    let l = config.views as u64;
    let d = config.dim as u64;
    let r = config.mlp_ratio as u64;
    let patch_len = (config.channels * config.patch * config.patch) as u64;
    let wh = (config.grid_w() * config.grid_h()) as u64;

    let local_block_per_view = block_flops(n, d, r);
    let local_block = l * local_block_per_view;
    let global_block = block_flops(l * n, d, r);
    let local_total = config.local_blocks as u64 * local_block;
    let global_total = config.global_blocks as u64 * global_block;
    let embed = l * wh * 2 * patch_len * d;
    let head = 2 * d * config.classes as u64;
    FlopCounts {
        local_block_per_view,
        local_block,
        global_block,
        local_block_scores: l * score_flops(n, d),
        global_block_scores: score_flops(l * n, d),
        local_total,
        global_total,
        embed,
        head,
        total: embed + local_total + global_total + head,
    }
}
