//! One decoding step: append the new token's cache entries, then attend.

use std::collections::BTreeMap;

use serde::Serialize;

use attnkit_core::config::AttnConfig;
use attnkit_core::weights::WeightSource;
use attnkit_core::{AttnError, KvCache, Result, Tensor};

use crate::entries::token_entries;
use crate::query::queries;
use crate::units::{decode_units, reduce_units, units_for, Mode, Unit, UnitOutput};

/// What one cache holder produced and read during a step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutput {
    pub units: Vec<UnitOutput>,
    /// Distinct cached elements read, the new row included.
    pub reads: usize,
    /// Distinct elements read per latent lane.
    pub lane_reads: BTreeMap<usize, usize>,
    /// Cache length after the append.
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// `[h × head_out_dim]`.
    pub o: Tensor,
    pub reads: usize,
    pub lane_reads: BTreeMap<usize, usize>,
}

/// Append the token's entries for the columns `cache` stores, then run
/// `units`. Works on full caches and on per-device shards alike; earlier
/// rows are never modified.
pub fn device_step(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    cache: &mut KvCache,
    h_t: &[f64],
    units: &[Unit],
    mode: Mode,
) -> Result<StepOutput> {
    let pos = cache.next_position();
    let row = token_entries(cfg, src, h_t, pos, cache.columns())?;
    cache.append(&row)?;
    let mut heads: Vec<usize> = units.iter().map(Unit::head).collect();
    heads.dedup();
    heads.sort_unstable();
    heads.dedup();
    let qs = queries(cfg, src, h_t, pos, &heads)?;
    let mut reader = cache.reader();
    let outs = decode_units(cfg, src, &mut reader, &qs, units, mode)?;
    Ok(StepOutput {
        units: outs,
        reads: reader.elements_read(),
        lane_reads: reader.lane_reads(),
        rows: cache.len(),
    })
}

/// Decode one token against a full cache, every head on one device.
pub fn decode_step(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    cache: &mut KvCache,
    h_t: &[f64],
    mode: Mode,
) -> Result<DecodeOutput> {
    if !cache.is_full() {
        return Err(AttnError::Integrity("single-device decode needs a full cache".into()));
    }
    let heads: Vec<usize> = (0..cfg.h).collect();
    let units = units_for(cfg, &heads)?;
    let step = device_step(cfg, src, cache, h_t, &units, mode)?;
    Ok(DecodeOutput {
        o: reduce_units(cfg, &step.units, &heads)?,
        reads: step.reads,
        lane_reads: step.lane_reads,
    })
}

pub fn naive_decode_step(cfg: &AttnConfig, src: &dyn WeightSource, cache: &mut KvCache, h_t: &[f64]) -> Result<DecodeOutput> {
    decode_step(cfg, src, cache, h_t, Mode::Naive)
}

pub fn absorbed_decode_step(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    cache: &mut KvCache,
    h_t: &[f64],
) -> Result<DecodeOutput> {
    decode_step(cfg, src, cache, h_t, Mode::Absorbed)
}

/// Decode every row of `h[n × d]` in turn from an empty cache starting at
/// `offset`. Returns `[n × h × head_out_dim]` and the final cache.
pub fn decode_sequence(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    h: &Tensor,
    offset: usize,
    mode: Mode,
) -> Result<(Tensor, KvCache)> {
    let (n, _) = h.dims2("decode_sequence")?;
    let mut cache = KvCache::for_config(cfg, offset)?;
    let mut data = Vec::new();
    for t in 0..n {
        data.extend_from_slice(decode_step(cfg, src, &mut cache, h.row(t), mode)?.o.data());
    }
    Ok((Tensor::new(vec![n, cfg.h, cfg.head_out_dim()], data)?, cache))
}
