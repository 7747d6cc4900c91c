//! Prefill forward passes for the baseline mechanisms (MHA, MQA, GQA, MFA,
//! TPA, GTA), the attention kernel they share, output gating and the
//! transformer block wrapper.

pub mod attention;
pub mod block;
pub mod gate;
pub mod prefill;

pub use attention::{causal_attention, HeadMap};
pub use block::{block_forward, MlpWeights};
pub use gate::gated_output;
pub use prefill::{
    cache_from_rows, gta_keys, prefill, prefill_at, project, rope_rows, tpa_expand, tpa_factors, PrefillOutput,
    Projections, TpaFactors,
};
