//! Latent-attention mechanisms: MLA, GLA-g and the two MLRA variants.
//!
//! MLRA moves the latent block sum of MLA (or of GLA-2) from inside the
//! key/value up-projection to outside the softmax: each block becomes an
//! independent branch and branch outputs are summed with weight α_attn.

pub mod blocks;
pub mod dispatch;
pub mod geometry;
pub mod prefill;
pub mod scale;

pub use blocks::{block_reconstruct, head_up};
pub use dispatch::{prefill_any, prefill_any_at};
pub use geometry::{all_branches, branches, group_map, latent_blocks, BranchGeom};
pub use prefill::{
    branch_outputs, branch_outputs_at, kv_latent, latent_prefill, latent_prefill_at, latent_project, query_latent,
    reduce_branches, LatentProjections,
};
pub use scale::{calib_factors, ScaleFactors, SqrtRatio};
