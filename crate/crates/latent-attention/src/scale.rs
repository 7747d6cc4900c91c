//! Variance calibration factors α_q, α_kv and α_attn, kept symbolic as
//! square roots of exact rationals.

use std::fmt;

use num_integer::Roots;
use num_rational::Ratio;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use attnkit_core::config::{AttnConfig, Variant};

/// `√(p/q)` with `p/q` reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqrtRatio {
    radicand: Ratio<u64>,
}

fn exact_sqrt(x: u64) -> Option<u64> {
    let r = x.sqrt();
    (r * r == x).then_some(r)
}

impl SqrtRatio {
    pub const ONE: SqrtRatio = SqrtRatio {
        radicand: Ratio::new_raw(1, 1),
    };

    /// # Panics
    /// If `den` is zero.
    #[must_use]
    pub fn new(num: u64, den: u64) -> Self {
        SqrtRatio {
            radicand: Ratio::new(num, den),
        }
    }

    #[must_use]
    pub fn radicand(&self) -> Ratio<u64> {
        self.radicand
    }

    #[must_use]
    pub fn value(&self) -> f64 {
        (*self.radicand.numer() as f64 / *self.radicand.denom() as f64).sqrt()
    }
}

impl fmt::Display for SqrtRatio {
    /// `√24`, `√2/2`, `1/2`, `3`: integers and fractions when the root is
    /// rational, otherwise a rationalized denominator.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (p, q) = (*self.radicand.numer(), *self.radicand.denom());
        match (exact_sqrt(p), exact_sqrt(q)) {
            (Some(a), Some(1)) => write!(f, "{a}"),
            (Some(a), Some(b)) => write!(f, "{a}/{b}"),
            (None, Some(1)) => write!(f, "√{p}"),
            (None, Some(b)) => write!(f, "√{p}/{b}"),
            _ => write!(f, "√{}/{q}", p * q),
        }
    }
}

impl Serialize for SqrtRatio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("SqrtRatio", 3)?;
        st.serialize_field("symbolic", &self.to_string())?;
        st.serialize_field("radicand", &format!("{}/{}", self.radicand.numer(), self.radicand.denom()))?;
        st.serialize_field("value", &self.value())?;
        st.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScaleFactors {
    pub alpha_q: SqrtRatio,
    pub alpha_kv: SqrtRatio,
    pub alpha_attn: SqrtRatio,
}

impl ScaleFactors {
    pub const UNIT: ScaleFactors = ScaleFactors {
        alpha_q: SqrtRatio::ONE,
        alpha_kv: SqrtRatio::ONE,
        alpha_attn: SqrtRatio::ONE,
    };
}

/// MLA: `α_q = √(d/d_c′)`, `α_kv = √(d/d_c)`. GLA-g: `α_kv = √(g·d/d_c)`.
/// MLRA-b: `α_kv = √(4d/d_c)`, `α_attn = 1/√b`. Everything is 1 when
/// scaling is disabled or the variant has no latent.
#[must_use]
pub fn calib_factors(cfg: &AttnConfig) -> ScaleFactors {
    if !cfg.scaling_enabled || !cfg.variant.is_latent() || cfg.d_c == 0 || cfg.d_cq == 0 {
        return ScaleFactors::UNIT;
    }
    let d = cfg.d as u64;
    let dc = cfg.d_c as u64;
    let alpha_q = SqrtRatio::new(d, cfg.d_cq as u64);
    let (alpha_kv, alpha_attn) = match cfg.variant {
        Variant::Gla => (SqrtRatio::new(cfg.g as u64 * d, dc), SqrtRatio::ONE),
        Variant::Mlra => (SqrtRatio::new(4 * d, dc), SqrtRatio::new(1, cfg.branches as u64)),
        _ => (SqrtRatio::new(d, dc), SqrtRatio::ONE),
    };
    ScaleFactors {
        alpha_q,
        alpha_kv,
        alpha_attn,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_forms() {
        assert_eq!(SqrtRatio::new(24, 1).to_string(), "√24");
        assert_eq!(SqrtRatio::new(1, 2).to_string(), "√2/2");
        assert_eq!(SqrtRatio::new(1, 4).to_string(), "1/2");
        assert_eq!(SqrtRatio::new(9, 1).to_string(), "3");
        assert_eq!(SqrtRatio::new(3, 4).to_string(), "√3/2");
        assert_eq!(SqrtRatio::new(3, 2).to_string(), "√6/2");
        assert_eq!(SqrtRatio::new(6144, 1024).to_string(), "√6");
    }

    #[test]
    fn main_configs() {
        let f = |l: &str| calib_factors(&AttnConfig::main(l).unwrap());
        let mla = f("MLA");
        assert_eq!((mla.alpha_q.to_string(), mla.alpha_kv.to_string()), ("√2".into(), "√6".into()));
        assert_eq!(f("GLA-2").alpha_kv.to_string(), "√12");
        assert_eq!(f("GLA-4").alpha_kv.to_string(), "√24");
        let m2 = f("MLRA-2");
        assert_eq!(m2.alpha_q.to_string(), "√3");
        assert_eq!(m2.alpha_kv.to_string(), "√24");
        assert_eq!(m2.alpha_attn.to_string(), "√2/2");
        let m4 = f("MLRA-4");
        assert_eq!(m4.alpha_attn.to_string(), "1/2");
        assert_eq!(m4.alpha_attn.value(), 0.5);
    }

    #[test]
    fn disabled_is_unit() {
        let cfg = AttnConfig::main("MLRA-4").unwrap().with_scaling(false);
        assert_eq!(calib_factors(&cfg), ScaleFactors::UNIT);
        assert_eq!(calib_factors(&AttnConfig::main("MHA").unwrap()), ScaleFactors::UNIT);
    }
}
