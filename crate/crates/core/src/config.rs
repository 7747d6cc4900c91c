//! Architecture hyperparameters shared by every mechanism.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AttnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mha,
    Mqa,
    Gqa,
    Mla,
    Mfa,
    Tpa,
    Gla,
    Gta,
    Mlra,
}

impl Variant {
    #[must_use]
    pub fn is_latent(self) -> bool {
        matches!(self, Variant::Mla | Variant::Gla | Variant::Mlra)
    }
}

/// Every knob the mechanisms read. Zero means "not set" for the optional
/// dimensions; [`AttnConfig::validate`] names whatever a variant is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub variant: Variant,
    pub h: usize,
    pub d: usize,
    pub d_h: usize,
    /// Partial-RoPE width d_h^R.
    pub d_hr: usize,
    /// Latent KV width d_c.
    pub d_c: usize,
    /// Latent query width d_c′.
    pub d_cq: usize,
    /// KV heads (MQA/GQA/GTA) or latent groups (GLA).
    pub g: usize,
    pub beta_q: usize,
    pub beta_kv: usize,
    /// MLRA branch count, 2 or 4.
    pub branches: usize,
    pub scaling_enabled: bool,
    pub gated: bool,
    pub rope_base: f64,
}

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// The rows of the cost tables, in their customary order.
pub const TABLE_LABELS: [&str; 10] = [
    "MHA", "MQA", "GQA", "MLA", "MFA", "TPA", "GLA-2", "GTA", "MLRA-2", "MLRA-4",
];

impl AttnConfig {
    /// Bare config with only the universal dims set.
    #[must_use]
    pub fn new(variant: Variant, h: usize, d: usize, d_h: usize) -> Self {
        let (g, branches) = match variant {
            Variant::Mha => (h, 0),
            Variant::Mqa | Variant::Mfa => (1, 0),
            _ => (0, 0),
        };
        AttnConfig {
            variant,
            h,
            d,
            d_h,
            d_hr: 0,
            d_c: 0,
            d_cq: 0,
            g,
            beta_q: 0,
            beta_kv: 0,
            branches,
            scaling_enabled: false,
            gated: false,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }

    /// Build from a table label such as `GLA-2` or `mlra4`; latent dims fall
    /// back to d_c = 4·d_h and d_h^R = d_h/2.
    pub fn from_label(label: &str, h: usize, d: usize, d_h: usize) -> Result<Self> {
        let (variant, n) = parse_label(label)?;
        let mut cfg = AttnConfig::new(variant, h, d, d_h);
        match variant {
            Variant::Gla => cfg.g = n.unwrap_or(2),
            Variant::Mlra => cfg.branches = n.unwrap_or(4),
            Variant::Gqa | Variant::Gta => {
                if let Some(g) = n {
                    cfg.g = g;
                }
            }
            _ => {}
        }
        if variant.is_latent() || variant == Variant::Gta {
            cfg.d_hr = d_h / 2;
        }
        if variant.is_latent() {
            cfg.d_c = 4 * d_h;
        }
        Ok(cfg)
    }

    #[must_use]
    pub fn with_latent(mut self, d_c: usize, d_cq: usize, d_hr: usize) -> Self {
        self.d_c = d_c;
        self.d_cq = d_cq;
        self.d_hr = d_hr;
        self
    }

    #[must_use]
    pub fn with_groups(mut self, g: usize) -> Self {
        self.g = g;
        self
    }

    #[must_use]
    pub fn with_ranks(mut self, beta_q: usize, beta_kv: usize) -> Self {
        self.beta_q = beta_q;
        self.beta_kv = beta_kv;
        self
    }

    #[must_use]
    pub fn with_branches(mut self, b: usize) -> Self {
        self.branches = b;
        self
    }

    #[must_use]
    pub fn with_rope_dim(mut self, d_hr: usize) -> Self {
        self.d_hr = d_hr;
        self
    }

    #[must_use]
    pub fn with_scaling(mut self, on: bool) -> Self {
        self.scaling_enabled = on;
        self
    }

    #[must_use]
    pub fn with_gate(mut self, on: bool) -> Self {
        self.gated = on;
        self
    }

    #[must_use]
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Mha => "MHA".into(),
            Variant::Mqa => "MQA".into(),
            Variant::Gqa => "GQA".into(),
            Variant::Mla => "MLA".into(),
            Variant::Mfa => "MFA".into(),
            Variant::Tpa => "TPA".into(),
            Variant::Gla => format!("GLA-{}", self.g),
            Variant::Gta => "GTA".into(),
            Variant::Mlra => format!("MLRA-{}", self.branches),
        }
    }

    /// Check that every dimension the variant needs is present and that the
    /// divisibility constraints hold.
    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        let mut need = |name: &'static str, v: usize| {
            if v == 0 {
                missing.push(name);
            }
        };
        need("h", self.h);
        need("d", self.d);
        need("d_h", self.d_h);
        match self.variant {
            Variant::Mha | Variant::Mqa => {}
            Variant::Gqa => need("g", self.g),
            Variant::Mfa => need("d_cq", self.d_cq),
            Variant::Tpa => {
                need("beta_q", self.beta_q);
                need("beta_kv", self.beta_kv);
            }
            Variant::Gta => {
                need("g", self.g);
                need("d_hr", self.d_hr);
            }
            Variant::Mla => {
                need("d_c", self.d_c);
                need("d_cq", self.d_cq);
                need("d_hr", self.d_hr);
            }
            Variant::Gla => {
                need("d_c", self.d_c);
                need("d_cq", self.d_cq);
                need("d_hr", self.d_hr);
                need("g", self.g);
            }
            Variant::Mlra => {
                need("d_c", self.d_c);
                need("d_cq", self.d_cq);
                need("d_hr", self.d_hr);
                need("branches", self.branches);
            }
        }
        if !missing.is_empty() {
            return Err(AttnError::config(format!(
                "{} is missing required field(s): {}",
                self.label(),
                missing.join(", ")
            )));
        }
        let bad = |msg: String| Err(AttnError::config(format!("{}: {msg}", self.label())));
        if self.d_hr % 2 != 0 {
            return bad(format!("d_hr = {} must be even for RoPE", self.d_hr));
        }
        match self.variant {
            Variant::Mha => {
                if self.g != self.h {
                    return bad(format!("MHA needs g == h, got g = {}", self.g));
                }
            }
            Variant::Mqa | Variant::Mfa => {
                if self.g != 1 {
                    return bad(format!("g must be 1, got {}", self.g));
                }
            }
            Variant::Gqa | Variant::Gta | Variant::Gla => {
                if self.h % self.g != 0 {
                    return bad(format!("h = {} not divisible by g = {}", self.h, self.g));
                }
            }
            _ => {}
        }
        let rope_width = match self.variant {
            Variant::Mfa => 2 * self.d_h,
            Variant::Gta if self.d_hr > self.d_h => return bad("d_hr exceeds d_h".into()),
            Variant::Gta | Variant::Mla | Variant::Gla | Variant::Mlra => self.d_hr,
            _ => self.d_h,
        };
        if rope_width % 2 != 0 {
            return bad(format!("RoPE width {rope_width} must be even"));
        }
        match self.variant {
            Variant::Gla => {
                if self.d_c % self.g != 0 {
                    return bad(format!("d_c = {} not divisible by g = {}", self.d_c, self.g));
                }
            }
            Variant::Mlra => {
                if self.branches != 2 && self.branches != 4 {
                    return bad(format!("branches must be 2 or 4, got {}", self.branches));
                }
                if self.d_c % 4 != 0 {
                    return bad(format!("d_c = {} not divisible into 4 blocks", self.d_c));
                }
                if self.branches == 2 && self.h % 2 != 0 {
                    return bad(format!("MLRA-2 needs an even head count, got {}", self.h));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Softmax temperature τ.
    #[must_use]
    pub fn tau(&self) -> f64 {
        match self.variant {
            Variant::Mla | Variant::Gla | Variant::Mlra => 1.0 / ((self.d_h + self.d_hr) as f64).sqrt(),
            Variant::Mfa => 1.0 / ((2 * self.d_h) as f64).sqrt(),
            _ => 1.0 / (self.d_h as f64).sqrt(),
        }
    }

    /// Width of one head's output vector.
    #[must_use]
    pub fn head_out_dim(&self) -> usize {
        if self.variant == Variant::Mfa {
            2 * self.d_h
        } else {
            self.d_h
        }
    }

    /// Number of distinct cached K/V heads for the head-replicating variants.
    #[must_use]
    pub fn kv_heads(&self) -> usize {
        match self.variant {
            Variant::Mha => self.h,
            Variant::Mqa | Variant::Mfa => 1,
            Variant::Gqa | Variant::Gta => self.g,
            _ => 0,
        }
    }

    /// Groups over which the KV latent is RMS-normalized: one per latent head
    /// with its own down-projection.
    #[must_use]
    pub fn kv_norm_groups(&self) -> usize {
        match self.variant {
            Variant::Gla => self.g,
            Variant::Mlra if self.branches == 2 => 2,
            _ => 1,
        }
    }

    /// Independent attention branches summed per head.
    #[must_use]
    pub fn branches_per_head(&self) -> usize {
        if self.variant == Variant::Mlra {
            self.branches
        } else {
            1
        }
    }

    // ── Presets ─────────────────────────────────────────────────────

    /// Small config for randomized equivalence suites
    /// (d=32, h=4, d_h=8, d_h^R=4, d_c=32, d_c′=16).
    pub fn tiny(label: &str) -> Result<Self> {
        let mut cfg = AttnConfig::from_label(label, 4, 32, 8)?;
        match cfg.variant {
            Variant::Mla | Variant::Gla | Variant::Mlra => {
                cfg = cfg.with_latent(32, 16, 4);
            }
            Variant::Gqa if cfg.g == 0 => cfg.g = 2,
            Variant::Gta => {
                if cfg.g == 0 {
                    cfg.g = 2;
                }
                cfg.d_hr = 4;
            }
            Variant::Mfa => cfg.d_cq = 16,
            Variant::Tpa => cfg = cfg.with_ranks(2, 2),
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The reference decoding context of the loading table: 64 heads,
    /// d_h = 128, d_h^R = 64, d_c = 512, 8 KV heads, β_kv = 2. `d` does not
    /// enter any per-token loading figure, so callers pick it freely.
    pub fn loading_context(label: &str, d: usize) -> Result<Self> {
        let mut cfg = AttnConfig::from_label(label, 64, d, 128)?;
        match cfg.variant {
            Variant::Gqa | Variant::Gta => {
                if cfg.g == 0 {
                    cfg.g = 8;
                }
                if cfg.variant == Variant::Gta {
                    cfg.d_hr = 64;
                }
            }
            Variant::Tpa => cfg = cfg.with_ranks(2, 2),
            Variant::Mfa => cfg.d_cq = 32,
            Variant::Mla | Variant::Gla | Variant::Mlra => cfg = cfg.with_latent(512, 32, 64),
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The 2.9B-scale training configurations (d=3072, h=24, d_h=128).
    pub fn main(label: &str) -> Result<Self> {
        let mut cfg = AttnConfig::from_label(label, 24, 3072, 128)?;
        match cfg.variant {
            Variant::Gqa | Variant::Gta => {
                cfg.g = 6;
                if cfg.variant == Variant::Gta {
                    cfg.d_hr = 64;
                }
            }
            Variant::Mfa => cfg.d_cq = 2048,
            Variant::Tpa => cfg = cfg.with_ranks(6, 2),
            Variant::Mla => cfg = cfg.with_latent(512, 1536, 64).with_scaling(true),
            Variant::Gla | Variant::Mlra => cfg = cfg.with_latent(512, 1024, 64).with_scaling(true),
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for AttnConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(h={}, d={}, d_h={}", self.label(), self.h, self.d, self.d_h)?;
        if self.d_hr > 0 {
            write!(f, ", d_hr={}", self.d_hr)?;
        }
        if self.d_c > 0 {
            write!(f, ", d_c={}", self.d_c)?;
        }
        if self.d_cq > 0 {
            write!(f, ", d_cq={}", self.d_cq)?;
        }
        if matches!(self.variant, Variant::Gqa | Variant::Gta | Variant::Gla) {
            write!(f, ", g={}", self.g)?;
        }
        if self.variant == Variant::Tpa {
            write!(f, ", beta_q={}, beta_kv={}", self.beta_q, self.beta_kv)?;
        }
        write!(f, ")")
    }
}

/// `gla2`, `GLA-2`, `mlra-4` … → (variant, trailing count).
pub fn parse_label(label: &str) -> Result<(Variant, Option<usize>)> {
    let norm: String = label
        .chars()
        .filter(|c| *c != '-' && *c != '_')
        .collect::<String>()
        .to_ascii_lowercase();
    let split = norm.find(|c: char| c.is_ascii_digit()).unwrap_or(norm.len());
    let (name, num) = norm.split_at(split);
    let n = if num.is_empty() {
        None
    } else {
        Some(
            num.parse::<usize>()
                .map_err(|_| AttnError::config(format!("bad variant label {label:?}")))?,
        )
    };
    let variant = match name {
        "mha" => Variant::Mha,
        "mqa" => Variant::Mqa,
        "gqa" => Variant::Gqa,
        "mla" => Variant::Mla,
        "mfa" => Variant::Mfa,
        "tpa" => Variant::Tpa,
        "gla" => Variant::Gla,
        "gta" => Variant::Gta,
        "mlra" => Variant::Mlra,
        _ => return Err(AttnError::config(format!("unknown variant {label:?}"))),
    };
    let takes_count = matches!(variant, Variant::Gla | Variant::Mlra | Variant::Gqa | Variant::Gta);
    if n.is_some() && !takes_count {
        return Err(AttnError::config(format!("variant {label:?} takes no count")));
    }
    Ok((variant, n))
}
