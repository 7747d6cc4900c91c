//! Per-device cache traffic of one simulated step.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use attnkit_core::config::AttnConfig;
use attnkit_core::{AttnError, Result};
use attnkit_cost::{fmt_q, per_device_load, q, Q, TP_DEGREES};
use attnkit_decode::StepOutput;

use crate::plan::ReductionKind;
use crate::shard::DeviceShards;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceTraffic {
    pub device: usize,
    pub stored_elements: usize,
    /// Distinct cached elements read during the step.
    pub reads: usize,
    /// `reads / rows`, elements.
    pub per_token: String,
    /// `reads / rows`, in units of d_h.
    pub per_token_dh: String,
    pub lane_reads: BTreeMap<usize, usize>,
    #[serde(skip)]
    pub exact: Q,
}

/// A run of cache columns stored on more than one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Replicated {
    pub segment: String,
    pub cols: [usize; 2],
    pub devices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficLedger {
    pub variant: String,
    pub tp: usize,
    pub d_h: usize,
    /// Cached tokens after the step.
    pub rows: usize,
    pub reduction: ReductionKind,
    pub devices: Vec<DeviceTraffic>,
    pub replicated_cache: Vec<Replicated>,
    /// Weights any element of which sits on two or more devices.
    pub replicated_weights: Vec<String>,
}

pub(crate) fn build_ledger(shards: &DeviceShards, steps: &[StepOutput]) -> Result<TrafficLedger> {
    let cfg = &shards.cfg;
    let rows = steps.first().map_or(0, |s| s.rows);
    if rows == 0 || steps.iter().any(|s| s.rows != rows) {
        return Err(AttnError::Integrity("devices disagree on cache length".into()));
    }
    let dh = q(cfg.d_h as u64);
    let devices = shards
        .devices
        .iter()
        .zip(steps)
        .map(|(dev, s)| {
            let exact = q(s.reads as u64) / q(rows as u64);
            DeviceTraffic {
                device: dev.device,
                stored_elements: dev.cache.stored_elements(),
                reads: s.reads,
                per_token: fmt_q(&exact),
                per_token_dh: fmt_q(&(exact / dh)),
                lane_reads: s.lane_reads.clone(),
                exact,
            }
        })
        .collect();
    Ok(TrafficLedger {
        variant: cfg.label(),
        tp: shards.tp,
        d_h: cfg.d_h,
        rows,
        reduction: shards.reduction,
        devices,
        replicated_cache: replicated_cache(shards),
        replicated_weights: replicated_weights(shards),
    })
}

fn replicated_cache(shards: &DeviceShards) -> Vec<Replicated> {
    let Some(first) = shards.devices.first() else {
        return Vec::new();
    };
    let layout = first.cache.layout();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); layout.width()];
    for d in &shards.devices {
        for &c in d.cache.columns() {
            holders[c].push(d.device);
        }
    }
    let mut out: Vec<Replicated> = Vec::new();
    for (c, devs) in holders.into_iter().enumerate() {
        if devs.len() < 2 {
            continue;
        }
        let seg = layout.segment_of(c).map_or("?", |s| s.name);
        match out.last_mut() {
            Some(r) if r.cols[1] == c && r.devices == devs && r.segment == seg => r.cols[1] = c + 1,
            _ => out.push(Replicated {
                segment: seg.to_string(),
                cols: [c, c + 1],
                devices: devs,
            }),
        }
    }
    out
}

fn replicated_weights(shards: &DeviceShards) -> Vec<String> {
    let overlap = |a: &std::ops::Range<usize>, b: &std::ops::Range<usize>| a.start < b.end && b.start < a.end;
    let mut names = BTreeSet::new();
    for (i, x) in shards.devices.iter().enumerate() {
        for y in &shards.devices[i + 1..] {
            for a in &x.weights.blocks {
                for b in &y.weights.blocks {
                    if a.spec.name == b.spec.name && overlap(&a.spec.rows, &b.spec.rows) && overlap(&a.spec.cols, &b.spec.cols) {
                        names.insert(a.spec.name);
                    }
                }
            }
        }
    }
    names.into_iter().map(|n| n.to_string()).collect()
}

impl TrafficLedger {
    /// Largest per-device loading, elements per token.
    #[must_use]
    pub fn max_per_token(&self) -> Q {
        self.devices.iter().map(|d| d.exact).max().unwrap_or_default()
    }

    /// Whether every device's measured loading equals the analytic figure.
    pub fn matches_model(&self, cfg: &AttnConfig) -> Result<bool> {
        let want = per_device_load(cfg, self.tp)?;
        Ok(self.devices.iter().all(|d| d.exact == want))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// One row per device.
    pub fn device_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| AttnError::Integrity(format!("csv: {e}"));
        w.write_record([
            "device",
            "stored (elements)",
            "reads (elements)",
            "rows (tokens)",
            "load (elements per token)",
            "load (elements of d_h per token)",
        ])
        .map_err(io)?;
        for d in &self.devices {
            w.write_record([
                d.device.to_string(),
                d.stored_elements.to_string(),
                d.reads.to_string(),
                self.rows.to_string(),
                d.per_token.clone(),
                d.per_token_dh.clone(),
            ])
            .map_err(io)?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| AttnError::Integrity(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AttnError::Integrity(format!("csv: {e}")))
}

/// Measured loadings laid out like the loading table: one row per method,
/// one column per TP degree, each cell the busiest device in units of d_h.
pub fn loading_matrix_csv(ledgers: &[TrafficLedger]) -> Result<String> {
    let mut order: Vec<&str> = Vec::new();
    for l in ledgers {
        if !order.contains(&l.variant.as_str()) {
            order.push(&l.variant);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AttnError::Integrity(format!("csv: {e}"));
    let mut header = vec!["method".to_string()];
    header.extend(TP_DEGREES.iter().map(|p| format!("measured_tp{p} (elements of d_h per token per device)")));
    w.write_record(&header).map_err(io)?;
    for v in order {
        let mut row = vec![v.to_string()];
        for p in TP_DEGREES {
            row.push(
                ledgers
                    .iter()
                    .find(|l| l.variant == v && l.tp == p)
                    .map(|l| fmt_q(&(l.max_per_token() / q(l.d_h as u64))))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).map_err(io)?;
    }
    finish(w)
}
