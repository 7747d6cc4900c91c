//! Output variance of one MLRA branch against the scaled branch sum.

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::tensor::RMS_EPS;
use attnkit_core::{build_weights, AttnError, Result, Rng, Tensor};
use attnkit_latent::{branch_outputs, calib_factors};

/// Tokens per parity trial; the sample is the last token's output.
pub const PARITY_TOKENS: usize = 4;

/// A reduced replica of `cfg` (h = 2, d = 16, d_h = 4, d_c = 16) with the
/// same variant, branch count and scaling switch. Every trial draws all
/// weights afresh, so branch weights are independent by construction.
pub fn parity_config(cfg: &AttnConfig) -> Result<AttnConfig> {
    if cfg.variant != Variant::Mlra {
        return Err(AttnError::Routing(format!("{} has a single branch", cfg.label())));
    }
    let small = AttnConfig::from_label(&cfg.label(), 2, 16, 4)?
        .with_latent(16, 8, 2)
        .with_scaling(cfg.scaling_enabled);
    small.validate()?;
    Ok(small)
}

/// `[O_(0), α_attn·Σ_b O_(b)]` at head 0, channel 0 of the last token.
pub(crate) fn draw(cfg: &AttnConfig, sigma: f64, r: &mut Rng) -> Result<[f64; 2]> {
    let ws = build_weights(cfg, sigma, &r.fork("weights"))?;
    let h = Tensor::gaussian(&[PARITY_TOKENS, cfg.d], 1.0, r).rmsnorm(RMS_EPS);
    let outs = branch_outputs(cfg, &ws, &h)?;
    let at = [PARITY_TOKENS - 1, 0, 0];
    let alpha = calib_factors(cfg).alpha_attn.value();
    let sum: f64 = outs.iter().map(|o| o.at(&at)).sum();
    Ok([outs[0].at(&at), alpha * sum])
}
