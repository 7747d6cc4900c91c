//! Decoding arithmetic intensity (flops per byte of cache moved).

use serde::Serialize;

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::{AttnError, Result};

use crate::loading::per_device_load;
use crate::rational::{fmt_q, q, Q};

/// The intensity table counts two bytes per cached element.
pub const TABLE_BYTES_PER_ELEMENT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Intensity {
    pub label: String,
    /// TP degree the figure is stated at: a latent mechanism's natural
    /// split (g for GLA, 4 for MLRA), otherwise 1.
    pub degree: usize,
    pub flops: String,
    pub bytes: String,
    pub value: String,
    /// Leading-order form, e.g. `≈2h`.
    pub tag: String,
    pub tag_value: String,
    #[serde(skip)]
    pub exact: Q,
}

/// Degree at which the intensity table evaluates each mechanism.
#[must_use]
pub fn table_degree(cfg: &AttnConfig) -> usize {
    match cfg.variant {
        Variant::Gla => cfg.g,
        Variant::Mlra => 4,
        _ => 1,
    }
}

/// Flops one device spends per decode step over `n` cached tokens: each
/// attention unit (a head, or a head's branch) costs `2n` per logit
/// channel and `2n` per value channel. TPA contracts the query with its
/// `β_kv` key components and the coefficients, `4n·β_kv·d_h + 4n·d_h` per
/// head.
pub fn device_flops(cfg: &AttnConfig, phi: usize, n: u64) -> Result<Q> {
    per_device_load(cfg, phi)?;
    if n == 0 {
        return Err(AttnError::config("context length must be at least 1"));
    }
    let u = |x: usize| q(x as u64);
    let n = q(n);
    let units = u(cfg.h * cfg.branches_per_head()) / u(phi);
    let per_unit = match cfg.variant {
        Variant::Tpa => q(4) * n * u(cfg.beta_kv * cfg.d_h) + q(4) * n * u(cfg.d_h),
        Variant::Mla | Variant::Gla | Variant::Mlra => {
            let blocks = match cfg.variant {
                Variant::Mla => 1,
                Variant::Gla => cfg.g,
                _ => 4,
            };
            let w = u(cfg.d_c) / u(blocks);
            q(2) * n * (w + u(cfg.d_hr)) + q(2) * n * w
        }
        _ => q(4) * n * u(cfg.head_out_dim()),
    };
    Ok(units * per_unit)
}

/// Leading-order tag and its value.
#[must_use]
pub fn asymptotic_intensity(cfg: &AttnConfig) -> (String, Q) {
    let u = |x: usize| q(x as u64);
    let (h, g) = (u(cfg.h), u(cfg.g.max(1)));
    match cfg.variant {
        Variant::Mha => ("≈1".into(), q(1)),
        Variant::Mqa | Variant::Mfa => ("≈h".into(), h),
        Variant::Gqa => ("≈h/g".into(), h / g),
        Variant::Mla => ("≈2h".into(), q(2) * h),
        Variant::Tpa => {
            let (b, dh) = (u(cfg.beta_kv), u(cfg.d_h));
            ("≈(1+β_kv)hd_h/(β_kv(h+d_h))".into(), (q(1) + b) * h * dh / (b * (h + dh)))
        }
        Variant::Gla if cfg.g == 2 => ("≈h".into(), h),
        Variant::Gla | Variant::Gta => ("≈2h/g".into(), q(2) * h / g),
        Variant::Mlra if cfg.branches == 2 => ("≈h".into(), h),
        Variant::Mlra => ("≈2h".into(), q(2) * h),
    }
}

/// Exact intensity at [`table_degree`] over `n` cached tokens.
pub fn arithmetic_intensity(cfg: &AttnConfig, n: u64) -> Result<Intensity> {
    let degree = table_degree(cfg);
    let flops = device_flops(cfg, degree, n)?;
    let bytes = q(TABLE_BYTES_PER_ELEMENT) * q(n) * per_device_load(cfg, degree)?;
    let exact = flops / bytes;
    let (tag, tag_value) = asymptotic_intensity(cfg);
    Ok(Intensity {
        label: cfg.label(),
        degree,
        flops: fmt_q(&flops),
        bytes: fmt_q(&bytes),
        value: fmt_q(&exact),
        tag,
        tag_value: fmt_q(&tag_value),
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ai(l: &str) -> Q {
        arithmetic_intensity(&AttnConfig::loading_context(l, 64).unwrap(), 5).unwrap().exact
    }

    #[test]
    fn headline_values() {
        assert_eq!(ai("MHA"), q(1));
        assert_eq!(ai("GQA"), q(8));
        assert_eq!(ai("MLA"), Q::new(17 * 64, 9));
        assert_eq!(ai("MQA"), q(64));
    }

    #[test]
    fn zero_context_rejected() {
        assert!(device_flops(&AttnConfig::tiny("MLA").unwrap(), 1, 0).is_err());
    }

    #[test]
    fn mla_tag() {
        let i = arithmetic_intensity(&AttnConfig::loading_context("MLA", 64).unwrap(), 1).unwrap();
        assert_eq!(i.tag, "≈2h");
        assert_eq!(i.value, "1088/9");
    }
}
