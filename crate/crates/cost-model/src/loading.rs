//! Cache elements each device reads per past token per decode step.

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::{AttnError, Result};

use crate::rational::{q, Q};

pub const TP_DEGREES: [usize; 4] = [1, 2, 4, 8];

fn check_degree(phi: usize) -> Result<()> {
    if TP_DEGREES.contains(&phi) {
        Ok(())
    } else {
        Err(AttnError::UnsupportedTp {
            degree: phi,
            reason: format!("expected one of {TP_DEGREES:?}"),
        })
    }
}

/// Per-device loading in elements.
///
/// Head-sharded state divides by φ; state with `k` shardable slices divides
/// by `min(φ, k)`; shared state (MQA/MFA heads, TPA components, RoPE keys,
/// an undivided latent) is read in full on every device.
pub fn per_device_load(cfg: &AttnConfig, phi: usize) -> Result<Q> {
    check_degree(phi)?;
    cfg.validate()?;
    let u = |x: usize| q(x as u64);
    let (h, dh, dr, dc, g) = (u(cfg.h), u(cfg.d_h), u(cfg.d_hr), u(cfg.d_c), cfg.g);
    let split = |k: usize| u(k.min(phi));
    let phi_q = u(phi);
    Ok(match cfg.variant {
        Variant::Mha => u(2) * h * dh / phi_q,
        Variant::Mqa => u(2) * dh,
        Variant::Gqa => u(2) * u(g) * dh / split(g),
        Variant::Mla => dc + dr,
        Variant::Mfa => u(4) * dh,
        Variant::Tpa => u(2 * cfg.beta_kv) * (h / phi_q + dh),
        Variant::Gla => dc / split(g) + dr,
        Variant::Gta => u(g) * dh / split(g) + dr,
        Variant::Mlra => dc / split(4) + dr,
    })
}

/// [`per_device_load`] in multiples of `d_h`.
pub fn load_in_dh(cfg: &AttnConfig, phi: usize) -> Result<Q> {
    Ok(per_device_load(cfg, phi)? / q(cfg.d_h as u64))
}

/// The state a single device can never shed, in elements: one KV head, the
/// shared components, or one latent slice plus the RoPE key.
pub fn sharding_floor(cfg: &AttnConfig) -> Result<Q> {
    cfg.validate()?;
    let u = |x: usize| q(x as u64);
    let (dh, dr, dc) = (u(cfg.d_h), u(cfg.d_hr), u(cfg.d_c));
    Ok(match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa => u(2) * dh,
        Variant::Mla => dc + dr,
        Variant::Mfa => u(4) * dh,
        Variant::Tpa => u(2 * cfg.beta_kv) * dh,
        Variant::Gla => dc / u(cfg.g) + dr,
        Variant::Gta => dh + dr,
        Variant::Mlra => dc / u(4) + dr,
    })
}
