//! Run configuration: a JSON file, then command-line flags on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use attnkit_core::config::{parse_label, AttnConfig, Variant};
use attnkit_core::{AttnError, Result};
use attnkit_cost::HardwareModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Every field is optional; commands fill gaps from their own presets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Option<String>,
    pub h: Option<usize>,
    pub d: Option<usize>,
    pub d_h: Option<usize>,
    pub d_hr: Option<usize>,
    pub d_c: Option<usize>,
    pub d_cq: Option<usize>,
    pub g: Option<usize>,
    pub beta_q: Option<usize>,
    pub beta_kv: Option<usize>,
    pub branches: Option<usize>,
    pub scaling_enabled: Option<bool>,
    pub gated: Option<bool>,
    pub rope_base: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    /// TP degrees φ.
    pub tp: Option<Vec<usize>>,
    pub hardware: Option<HardwareModel>,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
    /// Weight standard deviation σ_w.
    pub sigma_w: Option<f64>,
    /// `kimi` or `main`, for the table and roofline commands.
    pub context: Option<String>,
    /// Cached tokens for intensity and roofline figures.
    pub tokens: Option<u64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(AttnError::config(format!("cannot read {}: {e}", path.display()))))?;
        serde_json::from_str(&text)
            .map_err(|e| AttnError::config(format!("bad run config {}: {e}", path.display())).into())
    }

    /// Fields set in `top` win.
    #[must_use]
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(
            base, top, variant, h, d, d_h, d_hr, d_c, d_cq, g, beta_q, beta_kv, branches, scaling_enabled, gated,
            rope_base, seed, trials, tp, hardware, format, output, sigma_w, context, tokens
        )
    }

    pub fn variant_label(&self) -> Result<&str> {
        self.variant
            .as_deref()
            .ok_or_else(|| AttnError::config("no variant given; pass --variant or set \"variant\" in the config"))
    }

    /// Start from `preset(label)` and apply every dimension set here. The
    /// latent width and the RoPE width fall back to d_c = 4·d_h and
    /// d_h^R = d_h/2 when not given.
    pub fn attn_config(&self, label: &str, preset: impl Fn(&str) -> Result<AttnConfig>) -> Result<AttnConfig> {
        let (variant, _) = parse_label(label)?;
        let mut cfg = preset(label)?;
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut cfg.h, self.h);
        set(&mut cfg.d, self.d);
        set(&mut cfg.d_h, self.d_h);
        set(&mut cfg.d_cq, self.d_cq);
        set(&mut cfg.beta_q, self.beta_q);
        set(&mut cfg.beta_kv, self.beta_kv);
        set(&mut cfg.branches, self.branches);
        set(&mut cfg.g, self.g);
        if variant == Variant::Mha && self.g.is_none() {
            cfg.g = cfg.h;
        }
        if variant.is_latent() || variant == Variant::Gta {
            cfg.d_hr = self.d_hr.unwrap_or(cfg.d_h / 2);
        } else if let Some(v) = self.d_hr {
            cfg.d_hr = v;
        }
        if variant.is_latent() {
            cfg.d_c = self.d_c.unwrap_or(4 * cfg.d_h);
        } else if let Some(v) = self.d_c {
            cfg.d_c = v;
        }
        if let Some(on) = self.scaling_enabled {
            cfg.scaling_enabled = on;
        }
        if let Some(on) = self.gated {
            cfg.gated = on;
        }
        if let Some(b) = self.rope_base {
            cfg.rope_base = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    #[must_use]
    pub fn hardware(&self) -> HardwareModel {
        self.hardware.unwrap_or_default()
    }
}

/// Worker threads from `ATTNKIT_THREADS`, else the available parallelism.
/// Results never depend on this number.
pub fn threads() -> Result<usize> {
    match std::env::var("ATTNKIT_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(AttnError::config(format!("ATTNKIT_THREADS must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
