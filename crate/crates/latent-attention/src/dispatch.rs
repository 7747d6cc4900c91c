//! One entry point for every mechanism.

use attnkit_core::{AttnConfig, Result, Tensor, WeightSet};
use attnkit_zoo::PrefillOutput;

use crate::prefill::latent_prefill_at;

/// Prefill any variant, routing latent ones here and the rest to the zoo.
pub fn prefill_any(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor) -> Result<PrefillOutput> {
    prefill_any_at(cfg, ws, h, 0)
}

pub fn prefill_any_at(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<PrefillOutput> {
    if cfg.variant.is_latent() {
        latent_prefill_at(cfg, ws, h, offset)
    } else {
        attnkit_zoo::prefill_at(cfg, ws, h, offset)
    }
}
