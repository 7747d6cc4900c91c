//! Physical per-device copies of weights and cache.

use std::ops::Range;

use attnkit_core::config::AttnConfig;
use attnkit_core::weights::{sub_block, WeightName, WeightSource};
use attnkit_core::{AttnError, KvCache, Result, Tensor, WeightSet};
use attnkit_decode::Unit;

use crate::plan::{observed_reduction, plan_devices, reduction_rule, BlockSpec, ReductionKind};

#[derive(Debug, Clone, PartialEq)]
pub struct OwnedBlock {
    pub spec: BlockSpec,
    pub data: Tensor,
}

/// The weight slices one device holds. Requests outside them fail.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardWeights {
    pub device: usize,
    pub blocks: Vec<OwnedBlock>,
}

fn contains(outer: &Range<usize>, inner: &Range<usize>) -> bool {
    outer.start <= inner.start && inner.end <= outer.end
}

impl ShardWeights {
    #[must_use]
    pub fn element_count(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }
}

impl WeightSource for ShardWeights {
    fn block(&self, name: WeightName, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
        let owned = self
            .blocks
            .iter()
            .find(|b| b.spec.name == name && contains(&b.spec.rows, &rows) && contains(&b.spec.cols, &cols))
            .ok_or_else(|| {
                AttnError::Integrity(format!(
                    "device {} does not hold {name} rows {rows:?} cols {cols:?}",
                    self.device
                ))
            })?;
        let (r0, c0) = (owned.spec.rows.start, owned.spec.cols.start);
        sub_block(&owned.data, rows.start - r0..rows.end - r0, cols.start - c0..cols.end - c0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceShard {
    pub device: usize,
    pub units: Vec<Unit>,
    pub weights: ShardWeights,
    pub cache: KvCache,
}

/// Every device of one tensor-parallel group.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceShards {
    pub cfg: AttnConfig,
    pub tp: usize,
    pub reduction: ReductionKind,
    pub devices: Vec<DeviceShard>,
}

/// Split `ws` and the (full) `cache` over `phi` devices. The attention
/// output projection and gate are not part of the simulated step.
pub fn make_shards(cfg: &AttnConfig, ws: &WeightSet, cache: &KvCache, phi: usize) -> Result<DeviceShards> {
    let plans = plan_devices(cfg, phi)?;
    let reduction = observed_reduction(&plans);
    if reduction != reduction_rule(cfg, phi) {
        return Err(AttnError::Integrity(format!(
            "{} at φ = {phi}: plan reduces by {reduction:?}, rule says {:?}",
            cfg.label(),
            reduction_rule(cfg, phi)
        )));
    }
    if !cache.is_full() {
        return Err(AttnError::Integrity("shards are cut from a full cache".into()));
    }
    let devices = plans
        .into_iter()
        .map(|p| {
            let blocks = p
                .weights
                .into_iter()
                .map(|spec| {
                    let data = sub_block(ws.get(spec.name)?, spec.rows.clone(), spec.cols.clone())?;
                    Ok(OwnedBlock { spec, data })
                })
                .collect::<Result<_>>()?;
            Ok(DeviceShard {
                device: p.device,
                units: p.units,
                weights: ShardWeights { device: p.device, blocks },
                cache: cache.shard(&p.cache_cols)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DeviceShards {
        cfg: cfg.clone(),
        tp: phi,
        reduction,
        devices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnkit_core::weights::WeightKind;
    use attnkit_core::{build_weights, Rng};

    #[test]
    fn refuses_foreign_blocks() {
        let cfg = AttnConfig::from_label("MLRA-4", 8, 16, 4).unwrap().with_latent(16, 8, 2);
        let ws = build_weights(&cfg, 0.3, &Rng::new(1)).unwrap();
        let cache = KvCache::for_config(&cfg, 0).unwrap();
        let shards = make_shards(&cfg, &ws, &cache, 4).unwrap();
        let d1 = &shards.devices[1].weights;
        let uk = WeightName::of(WeightKind::UK);
        assert!(d1.block(uk, 4..8, 0..32).is_ok());
        assert!(matches!(d1.block(uk, 0..4, 0..4), Err(AttnError::Integrity(_))));
        let got = d1.block(uk, 5..7, 8..12).unwrap();
        assert_eq!(got, sub_block(ws.get(uk).unwrap(), 5..7, 8..12).unwrap());
    }

    #[test]
    fn single_device_holds_everything_but_output() {
        let cfg = AttnConfig::tiny("GLA-2").unwrap();
        let ws = build_weights(&cfg, 0.3, &Rng::new(1)).unwrap();
        let cache = KvCache::for_config(&cfg, 0).unwrap();
        let s = make_shards(&cfg, &ws, &cache, 1).unwrap();
        let out = ws.get(WeightName::of(WeightKind::O)).unwrap().len();
        assert_eq!(s.devices[0].weights.element_count() as u64, ws.element_count() - out as u64);
        assert_eq!(s.reduction, ReductionKind::Identity);
    }
}
