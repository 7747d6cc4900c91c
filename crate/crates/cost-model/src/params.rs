//! Attention parameter counts from the closed-form column of the loading
//! table.

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::{cache_layout, Result};

/// The table's parameter expression (W^O included, no gate).
pub fn table_param_formula(cfg: &AttnConfig) -> Result<u64> {
    cfg.validate()?;
    let u = |x: usize| x as u64;
    let (d, h, dh, dr, dc, dcq, g) = (u(cfg.d), u(cfg.h), u(cfg.d_h), u(cfg.d_hr), u(cfg.d_c), u(cfg.d_cq), u(cfg.g));
    let latent_q = dcq * (d + h * dh + h * dr) + d * dr;
    Ok(match cfg.variant {
        Variant::Mha => 4 * d * h * dh,
        Variant::Mqa => 2 * d * dh * (h + 1),
        Variant::Gqa => 2 * d * dh * (h + g),
        Variant::Mla => latent_q + dc * (d + 2 * h * dh) + d * h * dh,
        Variant::Mfa => dcq * (d + h * 2 * dh) + 2 * d * 2 * dh + d * h * 2 * dh,
        Variant::Tpa => d * u(cfg.beta_q + 2 * cfg.beta_kv) * (h + dh) + d * h * dh,
        // 2·h·d_h/g up-projection columns per latent row; g = 2 gives the
        // table's d_c(d + h·d_h).
        Variant::Gla => latent_q + dc * (d + 2 * h * dh / g) + d * h * dh,
        Variant::Gta => d * h * dh + d * g * dh + d * dr + d * h * dh,
        Variant::Mlra if cfg.branches == 2 => latent_q + dc * (d + h * dh) + d * h * dh,
        Variant::Mlra => latent_q + dc * (d + 2 * h * dh) + d * h * dh,
    })
}

/// Per-layer attention parameters: the table expression plus `W^G` when
/// the output gate is enabled.
pub fn param_count(cfg: &AttnConfig) -> Result<u64> {
    let gate = if cfg.gated {
        (cfg.d * cfg.h * cfg.head_out_dim()) as u64
    } else {
        0
    };
    Ok(table_param_formula(cfg)? + gate)
}

/// Cached elements per token.
pub fn kv_cache_per_token(cfg: &AttnConfig) -> Result<u64> {
    Ok(cache_layout(cfg)?.width() as u64)
}

/// Whole-model count: `layers` blocks of attention, a three-matrix MLP of
/// width `d_f` and two RMSNorm gains (plus the latent norm gains), a tied
/// `vocab × d` embedding and the final norm.
pub fn model_params(cfg: &AttnConfig, layers: u64, d_f: u64, vocab: u64) -> Result<u64> {
    let d = cfg.d as u64;
    let gains = match cfg.variant {
        Variant::Mla | Variant::Gla | Variant::Mlra => (cfg.d_cq + cfg.d_c) as u64,
        Variant::Mfa => cfg.d_cq as u64,
        _ => 0,
    };
    Ok(layers * (param_count(cfg)? + 3 * d * d_f + 2 * d + gains) + vocab * d + d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnkit_core::weights::weight_shapes;

    fn enumerated(cfg: &AttnConfig) -> u64 {
        weight_shapes(cfg).unwrap().iter().map(|(_, [r, c])| (r * c) as u64).sum()
    }

    #[test]
    fn mha_main() {
        assert_eq!(param_count(&AttnConfig::main("MHA").unwrap()).unwrap(), 37_748_736);
    }

    #[test]
    fn formula_matches_shapes() {
        for l in ["MHA", "MQA", "GQA", "MLA", "MFA", "TPA", "GLA-2", "GLA-4", "GTA", "MLRA-2", "MLRA-4"] {
            for cfg in [AttnConfig::main(l).unwrap(), AttnConfig::tiny(l).unwrap()] {
                assert_eq!(param_count(&cfg).unwrap(), enumerated(&cfg), "{l}");
                let gated = cfg.clone().with_gate(true);
                assert_eq!(param_count(&gated).unwrap(), enumerated(&gated), "{l} gated");
            }
        }
    }

    #[test]
    fn mlra2_equals_gla2() {
        let a = table_param_formula(&AttnConfig::main("MLRA-2").unwrap()).unwrap();
        let b = table_param_formula(&AttnConfig::main("GLA-2").unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
