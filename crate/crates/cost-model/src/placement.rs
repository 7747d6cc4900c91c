//! Splitting a fixed device count between tensor and data parallelism.

use serde::Serialize;

use attnkit_core::{AttnConfig, AttnError, Result};

use crate::loading::{per_device_load, TP_DEGREES};
use crate::rational::{fmt_q, q};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub label: String,
    pub devices: usize,
    pub tp: usize,
    pub dp: usize,
    /// Per-device loading in multiples of d_h.
    pub load_dh: String,
    /// Copies of the attention weights held across the devices.
    pub weight_replicas: usize,
}

/// The smallest TP degree that already reaches the loading the mechanism
/// would have at full TP over `devices`; the rest of the devices go to DP.
/// Any larger TP degree would only add redundant cache reads.
pub fn placement(cfg: &AttnConfig, devices: usize) -> Result<Placement> {
    let best = per_device_load(cfg, devices)?;
    let tp = TP_DEGREES
        .iter()
        .copied()
        .filter(|&p| p <= devices)
        .find(|&p| per_device_load(cfg, p).map(|l| l == best).unwrap_or(false))
        .ok_or_else(|| AttnError::config(format!("no TP degree fits {devices} devices")))?;
    Ok(Placement {
        label: cfg.label(),
        devices,
        tp,
        dp: devices / tp,
        load_dh: fmt_q(&(best / q(cfg.d_h as u64))),
        weight_replicas: devices / tp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_deployment() {
        let p = |l: &str| {
            let mut cfg = AttnConfig::loading_context(l, 7168).unwrap();
            cfg.h = 128;
            if l == "GQA" {
                cfg.g = 16;
            }
            let p = placement(&cfg, 8).unwrap();
            (p.tp, p.dp)
        };
        assert_eq!(p("MLA"), (1, 8));
        assert_eq!(p("GLA-2"), (2, 4));
        assert_eq!(p("MLRA-4"), (4, 2));
        assert_eq!(p("GQA"), (8, 1));
    }
}
