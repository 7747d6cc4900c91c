//! Roofline decode-time estimate: a step takes the longer of moving its
//! bytes at HBM bandwidth and issuing its flops at peak throughput.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use attnkit_core::{AttnConfig, AttnError, Result};

use crate::intensity::device_flops;
use crate::loading::per_device_load;
use crate::rational::{fmt_q, q, to_f64, Q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareModel {
    /// Bytes per second.
    pub hbm_bandwidth: u64,
    /// Flops per second.
    pub peak_flops: u64,
    pub bytes_per_element: u64,
}

impl HardwareModel {
    /// H100 SXM: 3.35 TB/s HBM3, 989 dense BF16 TFLOP/s, 2-byte elements.
    #[must_use]
    pub const fn h100() -> Self {
        HardwareModel {
            hbm_bandwidth: 3_350_000_000_000,
            peak_flops: 989_000_000_000_000,
            bytes_per_element: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hbm_bandwidth == 0 || self.peak_flops == 0 || self.bytes_per_element == 0 {
            return Err(AttnError::config(format!("hardware model fields must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Intensity at which both bounds coincide.
    #[must_use]
    pub fn ridge(&self) -> Q {
        Q::new(i128::from(self.peak_flops), i128::from(self.hbm_bandwidth))
    }
}

impl Default for HardwareModel {
    fn default() -> Self {
        HardwareModel::h100()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    MemoryBound,
    ComputeBound,
    /// Exactly at the ridge point.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineTime {
    #[serde(serialize_with = "ser_q")]
    pub seconds: Q,
    #[serde(serialize_with = "ser_q")]
    pub memory_seconds: Q,
    #[serde(serialize_with = "ser_q")]
    pub compute_seconds: Q,
    pub regime: Regime,
}

fn ser_q<S: serde::Serializer>(x: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_q(x))
}

impl RooflineTime {
    #[must_use]
    pub fn seconds_f64(&self) -> f64 {
        to_f64(&self.seconds)
    }
}

/// `max(bytes/BW, flops/peak)` and which bound is active.
pub fn roofline_decode_time(bytes: Q, flops: Q, hw: &HardwareModel) -> Result<RooflineTime> {
    hw.validate()?;
    if bytes < Q::zero() || flops < Q::zero() {
        return Err(AttnError::config("bytes and flops must be non-negative"));
    }
    let memory_seconds = bytes / Q::from_integer(i128::from(hw.hbm_bandwidth));
    let compute_seconds = flops / Q::from_integer(i128::from(hw.peak_flops));
    let regime = match memory_seconds.cmp(&compute_seconds) {
        std::cmp::Ordering::Greater => Regime::MemoryBound,
        std::cmp::Ordering::Less => Regime::ComputeBound,
        std::cmp::Ordering::Equal => Regime::Balanced,
    };
    Ok(RooflineTime {
        seconds: memory_seconds.max(compute_seconds),
        memory_seconds,
        compute_seconds,
        regime,
    })
}

/// Bytes and flops one device handles per decode step at TP degree `phi`
/// over `n` cached tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Workload {
    #[serde(serialize_with = "ser_q")]
    pub bytes: Q,
    #[serde(serialize_with = "ser_q")]
    pub flops: Q,
}

pub fn decode_workload(cfg: &AttnConfig, phi: usize, n: u64, hw: &HardwareModel) -> Result<Workload> {
    Ok(Workload {
        bytes: q(n) * per_device_load(cfg, phi)? * q(hw.bytes_per_element),
        flops: device_flops(cfg, phi, n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balance_point() {
        let hw = HardwareModel {
            hbm_bandwidth: 10,
            peak_flops: 40,
            bytes_per_element: 2,
        };
        let t = roofline_decode_time(q(5), q(20), &hw).unwrap();
        assert_eq!(t.regime, Regime::Balanced);
        assert_eq!(t.seconds, Q::new(1, 2));
        assert_eq!(t.memory_seconds, t.compute_seconds);
    }

    #[test]
    fn zero_flops_is_bandwidth_time() {
        let hw = HardwareModel::h100();
        let t = roofline_decode_time(q(3_350), Q::zero(), &hw).unwrap();
        assert_eq!(t.seconds, Q::new(1, 1_000_000_000));
        assert_eq!(t.regime, Regime::MemoryBound);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut hw = HardwareModel::h100();
        assert!(roofline_decode_time(q(1), -q(1), &hw).is_err());
        hw.peak_flops = 0;
        assert!(roofline_decode_time(q(1), q(1), &hw).is_err());
    }

    #[test]
    fn mla_over_mlra4_tp4_is_three() {
        let hw = HardwareModel::h100();
        let t = |l: &str, phi| {
            let cfg = AttnConfig::loading_context(l, 64).unwrap();
            let w = decode_workload(&cfg, phi, 131_072, &hw).unwrap();
            roofline_decode_time(w.bytes, w.flops, &hw).unwrap()
        };
        let (a, b) = (t("MLA", 1), t("MLRA-4", 4));
        assert_eq!(a.regime, Regime::MemoryBound);
        assert_eq!(b.regime, Regime::MemoryBound);
        assert_eq!(a.seconds / b.seconds, q(3));
    }
}
