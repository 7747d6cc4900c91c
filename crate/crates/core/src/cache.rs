//! Per-token decode state and instrumented reads.
//!
//! A cache row is the flat concatenation of the variant's cached segments
//! (see [`cache_layout`]). A cache may hold every column or only a subset,
//! which is how tensor-parallel devices keep their physical shard.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

use crate::config::{AttnConfig, Variant};
use crate::error::{AttnError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub name: &'static str,
    pub start: usize,
    pub width: usize,
}

impl Segment {
    #[must_use]
    pub fn cols(&self) -> Range<usize> {
        self.start..self.start + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheLayout {
    segments: Vec<Segment>,
    width: usize,
}

impl CacheLayout {
    fn from_parts(parts: &[(&'static str, usize)]) -> Self {
        let mut start = 0;
        let segments = parts
            .iter()
            .map(|&(name, width)| {
                let s = Segment { name, start, width };
                start += width;
                s
            })
            .collect();
        CacheLayout {
            segments,
            width: start,
        }
    }

    /// Elements stored per token.
    #[must_use]
    pub fn width(&self) -> usize {
        self.width
    }

    #[must_use]
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| AttnError::Integrity(format!("cache has no segment {name}")))
    }

    /// Segment containing global column `col`.
    #[must_use]
    pub fn segment_of(&self, col: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.cols().contains(&col))
    }
}

/// What each variant caches per token:
/// MHA/MQA/GQA/MFA `K | V` (RoPE already applied to K); TPA `KA | KC | VA | VC`
/// with coefficient index `b·h + i`; GTA `V | KR`; MLA/GLA/MLRA `C | KR`.
pub fn cache_layout(cfg: &AttnConfig) -> Result<CacheLayout> {
    cfg.validate()?;
    let dh = cfg.d_h;
    let parts: Vec<(&'static str, usize)> = match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa => {
            vec![("K", cfg.kv_heads() * dh), ("V", cfg.kv_heads() * dh)]
        }
        Variant::Mfa => vec![("K", 2 * dh), ("V", 2 * dh)],
        Variant::Tpa => vec![
            ("KA", cfg.beta_kv * cfg.h),
            ("KC", cfg.beta_kv * dh),
            ("VA", cfg.beta_kv * cfg.h),
            ("VC", cfg.beta_kv * dh),
        ],
        Variant::Gta => vec![("V", cfg.g * dh), ("KR", cfg.d_hr)],
        Variant::Mla | Variant::Gla | Variant::Mlra => vec![("C", cfg.d_c), ("KR", cfg.d_hr)],
    };
    Ok(CacheLayout::from_parts(&parts))
}

/// Append-only store of cache rows over a sorted set of global columns.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layout: CacheLayout,
    cols: Vec<usize>,
    data: Vec<f64>,
    rows: usize,
    offset: usize,
}

impl KvCache {
    /// Empty cache holding every column; row `t` sits at position `offset + t`.
    #[must_use]
    pub fn new(layout: CacheLayout, offset: usize) -> Self {
        let cols = (0..layout.width).collect();
        KvCache {
            layout,
            cols,
            data: Vec::new(),
            rows: 0,
            offset,
        }
    }

    pub fn for_config(cfg: &AttnConfig, offset: usize) -> Result<Self> {
        Ok(KvCache::new(cache_layout(cfg)?, offset))
    }

    #[must_use]
    pub fn layout(&self) -> &CacheLayout {
        &self.layout
    }

    /// Global columns physically present.
    #[must_use]
    pub fn columns(&self) -> &[usize] {
        &self.cols
    }

    #[must_use]
    pub fn is_full(&self) -> bool {
        self.cols.len() == self.layout.width
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[must_use]
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Position the next appended token will take.
    #[must_use]
    pub fn next_position(&self) -> usize {
        self.offset + self.rows
    }

    /// Elements physically stored.
    #[must_use]
    pub fn stored_elements(&self) -> usize {
        self.data.len()
    }

    /// Append one token. `values` covers exactly the stored columns.
    pub fn append(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.cols.len() {
            return Err(AttnError::dim("cache append", &[self.cols.len()], &[values.len()]));
        }
        self.data.extend_from_slice(values);
        self.rows += 1;
        Ok(())
    }

    /// Physical copy restricted to `cols` (sorted, deduplicated, all stored).
    pub fn shard(&self, cols: &[usize]) -> Result<KvCache> {
        let mut want = cols.to_vec();
        want.sort_unstable();
        want.dedup();
        let local: Vec<usize> = want
            .iter()
            .map(|c| {
                self.cols
                    .binary_search(c)
                    .map_err(|_| AttnError::Integrity(format!("column {c} not stored here")))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(self.rows * want.len());
        let w = self.cols.len();
        for r in 0..self.rows {
            data.extend(local.iter().map(|&l| self.data[r * w + l]));
        }
        Ok(KvCache {
            layout: self.layout.clone(),
            cols: want,
            data,
            rows: self.rows,
            offset: self.offset,
        })
    }

    /// Stored row `r`, over the stored columns.
    #[must_use]
    pub fn stored_row(&self, r: usize) -> &[f64] {
        let w = self.cols.len();
        &self.data[r * w..(r + 1) * w]
    }

    /// FNV-1a over the bit patterns of the first `rows` rows.
    #[must_use]
    pub fn checksum(&self, rows: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.data[..rows.min(self.rows) * self.cols.len()] {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    #[must_use]
    pub fn reader(&self) -> CacheReader<'_> {
        CacheReader {
            cache: self,
            touched: vec![false; self.data.len()],
            count: 0,
            lane: None,
            lanes: BTreeMap::new(),
        }
    }
}

/// Read handle that records which stored elements were touched, overall and
/// per lane (a lane is whatever the caller tags, e.g. a latent block).
/// Re-reading an element is free: the counts are of distinct elements, which
/// is what a device streaming its cache once per step would move.
#[derive(Debug)]
pub struct CacheReader<'a> {
    cache: &'a KvCache,
    touched: Vec<bool>,
    count: usize,
    lane: Option<usize>,
    lanes: BTreeMap<usize, (Vec<bool>, usize)>,
}

impl<'a> CacheReader<'a> {
    #[must_use]
    pub fn rows(&self) -> usize {
        self.cache.rows
    }

    #[must_use]
    pub fn layout(&self) -> &'a CacheLayout {
        &self.cache.layout
    }

    #[must_use]
    pub fn position(&self, row: usize) -> usize {
        self.cache.offset + row
    }

    pub fn set_lane(&mut self, lane: Option<usize>) {
        self.lane = lane;
    }

    /// Values of global columns `cols` in row `row`.
    pub fn read(&mut self, row: usize, cols: Range<usize>) -> Result<&'a [f64]> {
        let cache = self.cache;
        if row >= cache.rows {
            return Err(AttnError::Integrity(format!(
                "row {row} beyond cache length {}",
                cache.rows
            )));
        }
        if cols.is_empty() {
            return Ok(&[]);
        }
        let lo = cache.cols.binary_search(&cols.start).map_err(|_| {
            AttnError::Integrity(format!("column {} is not stored on this cache", cols.start))
        })?;
        let hi = lo + (cols.end - cols.start);
        if hi > cache.cols.len() || cache.cols[hi - 1] != cols.end - 1 {
            return Err(AttnError::Integrity(format!(
                "columns {cols:?} are not all stored on this cache"
            )));
        }
        let w = cache.cols.len();
        let (a, b) = (row * w + lo, row * w + hi);
        for t in &mut self.touched[a..b] {
            if !*t {
                *t = true;
                self.count += 1;
            }
        }
        if let Some(lane) = self.lane {
            let n = self.touched.len();
            let (bits, cnt) = self.lanes.entry(lane).or_insert_with(|| (vec![false; n], 0));
            for t in &mut bits[a..b] {
                if !*t {
                    *t = true;
                    *cnt += 1;
                }
            }
        }
        Ok(&cache.data[a..b])
    }

    /// Distinct stored elements read so far.
    #[must_use]
    pub fn elements_read(&self) -> usize {
        self.count
    }

    /// Distinct elements read per lane.
    #[must_use]
    pub fn lane_reads(&self) -> BTreeMap<usize, usize> {
        self.lanes.iter().map(|(k, (_, c))| (*k, *c)).collect()
    }

    /// Global columns touched in any row.
    #[must_use]
    pub fn touched_columns(&self) -> Vec<usize> {
        let w = self.cache.cols.len();
        let mut seen = vec![false; w];
        for (i, t) in self.touched.iter().enumerate() {
            if *t {
                seen[i % w] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(i, _)| self.cache.cols[i])
            .collect()
    }
}
