//! Table reproductions as CSV and JSON.

use serde::Serialize;

use attnkit_core::config::{AttnConfig, Variant, TABLE_LABELS};
use attnkit_core::{AttnError, Result};

use crate::intensity::{arithmetic_intensity, Intensity};
use crate::loading::{load_in_dh, per_device_load, TP_DEGREES};
use crate::params::{kv_cache_per_token, param_count};
use crate::rational::{fmt_q, q};

/// Which dimensions the tables are evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Context {
    /// The loading-table context: 64 heads, d_h = 128, 8 KV heads,
    /// d_c = 512, d_h^R = 64, β_kv = 2, d = 7168, d_c′ = 1536.
    Kimi,
    /// The 24-head, d = 3072 training configurations.
    Main,
}

impl Context {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kimi" => Ok(Context::Kimi),
            "main" => Ok(Context::Main),
            other => Err(AttnError::config(format!("unknown context {other:?}; expected kimi or main"))),
        }
    }

    pub fn config(self, label: &str) -> Result<AttnConfig> {
        match self {
            Context::Main => AttnConfig::main(label),
            Context::Kimi => {
                let mut cfg = AttnConfig::loading_context(label, 7168)?;
                if cfg.variant.is_latent() || cfg.variant == Variant::Mfa {
                    cfg.d_cq = 1536;
                }
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub variant: String,
    pub params_per_layer: u64,
    pub kv_cache_elements: u64,
    /// Multiples of d_h.
    pub kv_cache_dh: String,
    /// Multiples of d_h at TP 1, 2, 4, 8.
    pub per_device_load_dh: Vec<String>,
    pub per_device_load_elements: Vec<String>,
    pub arithmetic_intensity: Intensity,
}

/// One row per table method; the intensity is evaluated over `n` tokens.
pub fn cost_report(cfg: &AttnConfig, n: u64) -> Result<CostReport> {
    let kv = kv_cache_per_token(cfg)?;
    let mut load_dh = Vec::new();
    let mut load_el = Vec::new();
    for &p in &TP_DEGREES {
        load_dh.push(fmt_q(&load_in_dh(cfg, p)?));
        load_el.push(fmt_q(&per_device_load(cfg, p)?));
    }
    Ok(CostReport {
        variant: cfg.label(),
        params_per_layer: param_count(cfg)?,
        kv_cache_elements: kv,
        kv_cache_dh: fmt_q(&(q(kv) / q(cfg.d_h as u64))),
        per_device_load_dh: load_dh,
        per_device_load_elements: load_el,
        arithmetic_intensity: arithmetic_intensity(cfg, n)?,
    })
}

pub fn table_reports(ctx: Context, n: u64) -> Result<Vec<CostReport>> {
    TABLE_LABELS.iter().map(|l| cost_report(&ctx.config(l)?, n)).collect()
}

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AttnError::config(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| AttnError::config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AttnError::config(format!("csv: {e}")))
}

/// Parameters, cache and loading columns in table order.
pub fn loading_csv(reports: &[CostReport]) -> Result<String> {
    let header = [
        "method",
        "params_per_layer (elements)",
        "kv_cache (elements of d_h per token)",
        "load_tp1 (elements of d_h per token per device)",
        "load_tp2 (elements of d_h per token per device)",
        "load_tp4 (elements of d_h per token per device)",
        "load_tp8 (elements of d_h per token per device)",
    ];
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.variant.clone(), r.params_per_layer.to_string(), r.kv_cache_dh.clone()];
            row.extend(r.per_device_load_dh.iter().cloned());
            row
        })
        .collect();
    to_csv(&header, rows)
}

pub fn intensity_csv(reports: &[CostReport], n: u64) -> Result<String> {
    let header = [
        "method",
        "tp_degree",
        "context (tokens)",
        "flops (flops per step per device)",
        "bytes (bytes per step per device)",
        "intensity (flops per byte)",
        "asymptotic (flops per byte)",
        "asymptotic_value (flops per byte)",
    ];
    let rows = reports
        .iter()
        .map(|r| {
            let a = &r.arithmetic_intensity;
            vec![
                r.variant.clone(),
                a.degree.to_string(),
                n.to_string(),
                a.flops.clone(),
                a.bytes.clone(),
                a.value.clone(),
                a.tag.clone(),
                a.tag_value.clone(),
            ]
        })
        .collect();
    to_csv(&header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mla_row_in_csv() {
        let reps = table_reports(Context::Kimi, 1).unwrap();
        let csv = loading_csv(&reps).unwrap();
        assert!(csv.lines().any(|l| l == format!("MLA,{},4.5,4.5,4.5,4.5,4.5", reps[3].params_per_layer)));
        assert!(csv.lines().next().unwrap().contains("elements of d_h"));
    }

    #[test]
    fn context_parse() {
        assert_eq!(Context::parse("KIMI").unwrap(), Context::Kimi);
        assert!(Context::parse("qwen").is_err());
    }

    #[test]
    fn json_is_stable() {
        let a = serde_json::to_string(&table_reports(Context::Main, 8).unwrap()).unwrap();
        let b = serde_json::to_string(&table_reports(Context::Main, 8).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"variant\":\"MLRA-4\""));
    }
}
