//! What each device owns under every mechanism's sharding rule.

use std::ops::Range;

use serde::Serialize;

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::weights::{WeightKind, WeightName};
use attnkit_core::{cache_layout, AttnError, Result};
use attnkit_cost::TP_DEGREES;
use attnkit_decode::Unit;
use attnkit_latent::branches;

/// How per-device outputs combine into the full attention output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReductionKind {
    /// One device holds everything.
    Identity,
    /// Devices own disjoint heads; outputs are gathered.
    Concat,
    /// Devices own disjoint branches of the same heads; outputs are summed.
    Sum,
    /// Both: branch partials summed within each head group, groups gathered.
    SumConcat,
}

/// A rectangle of a named weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockSpec {
    pub name: WeightName,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DevicePlan {
    pub device: usize,
    pub units: Vec<Unit>,
    /// Global cache columns stored on the device, ascending.
    pub cache_cols: Vec<usize>,
    pub weights: Vec<BlockSpec>,
}

/// The axis a mechanism shards along, for error messages.
#[must_use]
pub fn shardable_axis(cfg: &AttnConfig) -> &'static str {
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Mfa | Variant::Mla => "query heads",
        Variant::Gqa | Variant::Gta => "query heads within KV heads",
        Variant::Tpa => "head coefficients",
        Variant::Gla => "latent groups, then heads within a group",
        Variant::Mlra => "latent blocks (branch x group), then heads",
    }
}

fn unsupported(cfg: &AttnConfig, phi: usize, why: &str) -> AttnError {
    AttnError::UnsupportedTp {
        degree: phi,
        reason: format!("{} {why} (shardable axis: {})", cfg.label(), shardable_axis(cfg)),
    }
}

/// Small config every mechanism can shard eight ways (h = 8, d = 32,
/// d_h = 8, d_h^R = 4, d_c = 32, two KV heads or groups).
pub fn small_tp_config(label: &str) -> Result<AttnConfig> {
    let mut cfg = AttnConfig::from_label(label, 8, 32, 8)?;
    match cfg.variant {
        Variant::Mla | Variant::Gla | Variant::Mlra => cfg = cfg.with_latent(32, 16, 4).with_scaling(true),
        Variant::Gqa | Variant::Gta => {
            if cfg.g == 0 {
                cfg.g = 2;
            }
            if cfg.variant == Variant::Gta {
                cfg.d_hr = 4;
            }
        }
        Variant::Mfa => cfg.d_cq = 16,
        Variant::Tpa => cfg = cfg.with_ranks(2, 2),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Check that `phi` splits the mechanism evenly.
pub fn check_support(cfg: &AttnConfig, phi: usize) -> Result<()> {
    cfg.validate()?;
    if !TP_DEGREES.contains(&phi) {
        return Err(unsupported(cfg, phi, "supports only 1, 2, 4, 8"));
    }
    if cfg.h % phi != 0 {
        return Err(unsupported(cfg, phi, &format!("has h = {}, not divisible", cfg.h)));
    }
    let g = cfg.g;
    // either whole groups per device, or every group split into equal head runs
    let nested = g % phi == 0 || (phi % g == 0 && (cfg.h / g) % (phi / g) == 0);
    let ok = match cfg.variant {
        Variant::Gqa | Variant::Gta | Variant::Gla => nested,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(unsupported(cfg, phi, "groups do not split evenly"))
    }
}

/// Reduction each mechanism must use at degree `phi`.
pub fn reduction_rule(cfg: &AttnConfig, phi: usize) -> ReductionKind {
    if phi == 1 {
        return ReductionKind::Identity;
    }
    match cfg.variant {
        Variant::Mlra if cfg.branches == 4 && phi <= 4 => ReductionKind::Sum,
        Variant::Mlra if cfg.branches == 2 && phi == 2 => ReductionKind::Concat,
        Variant::Mlra => ReductionKind::SumConcat,
        _ => ReductionKind::Concat,
    }
}

fn span(k: usize, parts: usize, total: usize) -> Range<usize> {
    let w = total / parts;
    k * w..(k + 1) * w
}

fn cols_of(r: Range<usize>, width: usize) -> Range<usize> {
    r.start * width..r.end * width
}

fn full(name: WeightName, rows: usize, cols: usize) -> BlockSpec {
    BlockSpec {
        name,
        rows: 0..rows,
        cols: 0..cols,
    }
}

/// Head-sharded plan shared by the non-latent mechanisms and MLA.
fn head_plan(cfg: &AttnConfig, phi: usize, k: usize) -> Result<DevicePlan> {
    let layout = cache_layout(cfg)?;
    let (d, h, dh, dr) = (cfg.d, cfg.h, cfg.d_h, cfg.d_hr);
    let heads = span(k, phi, h);
    let one = WeightName::of;
    let mut w = Vec::new();
    let mut cols = Vec::new();
    let seg = |name: &str| layout.segment(name).map(|s| s.cols());
    let kv_span = |kv: usize| {
        let r = h / kv;
        heads.start / r..(heads.end - 1) / r + 1
    };
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa => {
            let kv = kv_span(cfg.kv_heads());
            w.push(BlockSpec { name: one(WeightKind::Q), rows: 0..d, cols: cols_of(heads.clone(), dh) });
            for (kind, s) in [(WeightKind::K, "K"), (WeightKind::V, "V")] {
                w.push(BlockSpec { name: one(kind), rows: 0..d, cols: cols_of(kv.clone(), dh) });
                let start = seg(s)?.start;
                cols.extend(cols_of(kv.clone(), dh).map(|c| start + c));
            }
        }
        Variant::Mfa => {
            w.push(full(one(WeightKind::CQ), d, cfg.d_cq));
            w.push(BlockSpec { name: one(WeightKind::UQ), rows: 0..cfg.d_cq, cols: cols_of(heads.clone(), 2 * dh) });
            w.push(full(one(WeightKind::K), d, 2 * dh));
            w.push(full(one(WeightKind::V), d, 2 * dh));
            cols.extend(0..layout.width());
        }
        Variant::Tpa => {
            let coeff = |beta: usize| (0..beta).map(|b| b * h + heads.start..b * h + heads.end).collect::<Vec<_>>();
            for r in coeff(cfg.beta_q) {
                w.push(BlockSpec { name: one(WeightKind::AQ), rows: 0..d, cols: r });
            }
            w.push(full(one(WeightKind::CQ), d, cfg.beta_q * dh));
            for (a, c, sa, sc) in [(WeightKind::AK, WeightKind::CK, "KA", "KC"), (WeightKind::AV, WeightKind::CV, "VA", "VC")] {
                for r in coeff(cfg.beta_kv) {
                    let start = seg(sa)?.start;
                    cols.extend(r.clone().map(|x| start + x));
                    w.push(BlockSpec { name: one(a), rows: 0..d, cols: r });
                }
                w.push(full(one(c), d, cfg.beta_kv * dh));
                cols.extend(seg(sc)?);
            }
        }
        Variant::Gta => {
            let kv = kv_span(cfg.g);
            w.push(BlockSpec { name: one(WeightKind::Q), rows: 0..d, cols: cols_of(heads.clone(), dh) });
            w.push(BlockSpec { name: one(WeightKind::KV), rows: 0..d, cols: cols_of(kv.clone(), dh) });
            w.push(full(one(WeightKind::KR), d, dr));
            let start = seg("V")?.start;
            cols.extend(cols_of(kv, dh).map(|c| start + c));
            cols.extend(seg("KR")?);
        }
        Variant::Mla | Variant::Gla | Variant::Mlra => {
            return Err(AttnError::Routing("latent plans are built per branch".into()));
        }
    }
    Ok(DevicePlan {
        device: k,
        units: heads.map(Unit::Head).collect(),
        cache_cols: cols,
        weights: w,
    })
}

/// Which (head, branch) pairs device `k` of `phi` runs.
fn latent_assignment(cfg: &AttnConfig, phi: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    let h = cfg.h;
    let mut out = Vec::new();
    let all_b = |heads: Range<usize>, bs: Range<usize>, out: &mut Vec<(usize, usize)>| {
        for i in heads {
            for b in bs.clone() {
                out.push((i, b));
            }
        }
    };
    match cfg.variant {
        Variant::Mla => all_b(span(k, phi, h), 0..1, &mut out),
        Variant::Gla => {
            let g = cfg.g;
            if phi <= g {
                all_b(span(k, phi, h), 0..1, &mut out);
            } else {
                // groups are contiguous head ranges; each splits further
                let per = phi / g;
                let group = span(k / per, g, h);
                let sub = span(k % per, per, group.len());
                all_b(group.start + sub.start..group.start + sub.end, 0..1, &mut out);
            }
        }
        Variant::Mlra if cfg.branches == 4 => match phi {
            1 => all_b(0..h, 0..4, &mut out),
            2 | 4 => all_b(0..h, span(k, phi, 4), &mut out),
            _ => all_b(span(k % 2, 2, h), k / 2..k / 2 + 1, &mut out),
        },
        Variant::Mlra => match phi {
            1 => all_b(0..h, 0..2, &mut out),
            2 => all_b(span(k, 2, h), 0..2, &mut out),
            4 => all_b(span(k / 2, 2, h), k % 2..k % 2 + 1, &mut out),
            _ => {
                let group = span(k / 4, 2, h);
                let sub = span(k % 2, 2, group.len());
                let b = (k / 2) % 2;
                all_b(group.start + sub.start..group.start + sub.end, b..b + 1, &mut out);
            }
        },
        _ => return Err(AttnError::Routing(format!("{} has no branches", cfg.label()))),
    }
    Ok(out)
}

fn latent_plan(cfg: &AttnConfig, phi: usize, k: usize) -> Result<DevicePlan> {
    let layout = cache_layout(cfg)?;
    let (d, dh, dr) = (cfg.d, cfg.d_h, cfg.d_hr);
    let one = WeightName::of;
    let pairs = latent_assignment(cfg, phi, k)?;
    let mut units = Vec::new();
    for (i, b) in &pairs {
        units.push(Unit::Branch(branches(cfg, *i)?.swap_remove(*b)));
    }
    let mut heads: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    heads.dedup();
    let hs = heads[0]..heads[heads.len() - 1] + 1;
    let mut w = vec![
        full(one(WeightKind::DQ), d, cfg.d_cq),
        BlockSpec { name: one(WeightKind::UQ), rows: 0..cfg.d_cq, cols: cols_of(hs.clone(), dh) },
        BlockSpec { name: one(WeightKind::QR), rows: 0..cfg.d_cq, cols: cols_of(hs, dr) },
        full(one(WeightKind::KR), d, dr),
    ];
    let c0 = layout.segment("C")?.start;
    let mut cols: Vec<usize> = Vec::new();
    let groups = cfg.kv_norm_groups();
    let group_w = cfg.d_c / groups;
    for u in &units {
        let Unit::Branch(g) = u else { unreachable!() };
        cols.extend(g.latent.clone().map(|c| c0 + c));
        let dkv = if groups == 1 {
            one(WeightKind::DKV)
        } else {
            WeightName::grouped(WeightKind::DKV, g.latent.start / group_w)
        };
        // the latent is normalized over its whole group, so the group's
        // down-projection is needed even when only one block is stored
        w.push(full(dkv, d, group_w));
        w.push(BlockSpec { name: g.uk, rows: g.rows.clone(), cols: g.cols.clone() });
        w.push(BlockSpec { name: g.uv, rows: g.rows.clone(), cols: g.cols.clone() });
    }
    cols.extend(layout.segment("KR")?.cols());
    Ok(DevicePlan {
        device: k,
        units,
        cache_cols: cols,
        weights: w,
    })
}

/// Join blocks of the same weight and rows whose columns touch. Input is
/// sorted by (name, row start, column start).
fn merge_blocks(blocks: Vec<BlockSpec>) -> Vec<BlockSpec> {
    let mut out: Vec<BlockSpec> = Vec::with_capacity(blocks.len());
    for b in blocks {
        match out.last_mut() {
            Some(last) if last.name == b.name && last.rows == b.rows && last.cols.end >= b.cols.start => {
                last.cols.end = last.cols.end.max(b.cols.end);
            }
            _ => out.push(b),
        }
    }
    out
}

/// Per-device plans, device-id order.
pub fn plan_devices(cfg: &AttnConfig, phi: usize) -> Result<Vec<DevicePlan>> {
    check_support(cfg, phi)?;
    (0..phi)
        .map(|k| {
            let mut p = if cfg.variant.is_latent() {
                latent_plan(cfg, phi, k)?
            } else {
                head_plan(cfg, phi, k)?
            };
            p.cache_cols.sort_unstable();
            p.cache_cols.dedup();
            p.weights.sort_by(|a, b| (a.name, a.rows.start, a.cols.start).cmp(&(b.name, b.rows.start, b.cols.start)));
            p.weights.dedup();
            p.weights = merge_blocks(std::mem::take(&mut p.weights));
            Ok(p)
        })
        .collect()
}

/// Reduction implied by a set of plans: heads split across devices means a
/// gather, a head's branches split across devices means a sum.
#[must_use]
pub fn observed_reduction(plans: &[DevicePlan]) -> ReductionKind {
    let head_sets: Vec<Vec<usize>> = plans
        .iter()
        .map(|p| {
            let mut hs: Vec<usize> = p.units.iter().map(Unit::head).collect();
            hs.sort_unstable();
            hs.dedup();
            hs
        })
        .collect();
    let heads_split = head_sets.windows(2).any(|w| w[0] != w[1]);
    let mut holders: Vec<(usize, usize)> = head_sets
        .iter()
        .enumerate()
        .flat_map(|(dev, hs)| hs.iter().map(move |&i| (i, dev)))
        .collect();
    holders.sort_unstable();
    let branches_split = holders.windows(2).any(|w| w[0].0 == w[1].0);
    match (heads_split, branches_split) {
        (false, false) => ReductionKind::Identity,
        (true, false) => ReductionKind::Concat,
        (false, true) => ReductionKind::Sum,
        (true, true) => ReductionKind::SumConcat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp_cfg(l: &str) -> AttnConfig {
        AttnConfig::loading_context(l, 64).unwrap()
    }

    #[test]
    fn mlra4_phi4_owns_one_block() {
        let cfg = tp_cfg("MLRA-4");
        let plans = plan_devices(&cfg, 4).unwrap();
        for (k, p) in plans.iter().enumerate() {
            assert_eq!(p.cache_cols.len(), 128 + 64);
            assert_eq!(p.cache_cols[0], k * 128);
            assert_eq!(p.units.len(), cfg.h);
        }
        assert_eq!(observed_reduction(&plans), ReductionKind::Sum);
    }

    #[test]
    fn mla_replicates_latent() {
        let cfg = tp_cfg("MLA");
        let plans = plan_devices(&cfg, 4).unwrap();
        assert!(plans.iter().all(|p| p.cache_cols.len() == 512 + 64));
        assert_eq!(observed_reduction(&plans), ReductionKind::Concat);
    }

    #[test]
    fn declared_rules_match_plans() {
        for l in attnkit_core::TABLE_LABELS {
            let cfg = tp_cfg(l);
            for phi in TP_DEGREES {
                let plans = plan_devices(&cfg, phi).unwrap();
                assert_eq!(observed_reduction(&plans), reduction_rule(&cfg, phi), "{l} φ={phi}");
            }
        }
    }

    #[test]
    fn every_unit_exactly_once() {
        for l in attnkit_core::TABLE_LABELS {
            let cfg = tp_cfg(l);
            for phi in TP_DEGREES {
                let mut seen: Vec<(usize, usize)> = plan_devices(&cfg, phi)
                    .unwrap()
                    .iter()
                    .flat_map(|p| p.units.iter().map(|u| (u.head(), u.branch())))
                    .collect();
                seen.sort_unstable();
                let want: Vec<(usize, usize)> =
                    (0..cfg.h).flat_map(|i| (0..cfg.branches_per_head()).map(move |b| (i, b))).collect();
                assert_eq!(seen, want, "{l} φ={phi}");
            }
        }
    }

    #[test]
    fn unsupported_degrees() {
        let cfg = tp_cfg("MLA");
        let e = check_support(&cfg, 16).unwrap_err().to_string();
        assert!(e.contains("unsupported TP degree"), "{e}");
        let odd = AttnConfig::tiny("MHA").unwrap();
        assert!(check_support(&odd, 8).is_err());
    }
}
