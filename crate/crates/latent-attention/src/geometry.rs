//! Which latent columns and which up-projection block every (head, branch)
//! pair uses.

use std::ops::Range;

use serde::Serialize;

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::weights::{WeightKind, WeightName};
use attnkit_core::{AttnError, Result};

/// Head `i` of `h` → `(γ, ī)`: group 0 for the first half, 1 for the second.
#[must_use]
pub fn group_map(i: usize, h: usize) -> (usize, usize) {
    let gamma = usize::from(i >= h / 2);
    (gamma, i - gamma * h / 2)
}

/// One attention branch of one head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchGeom {
    pub head: usize,
    pub branch: usize,
    /// Latent block index; tags reads in the traffic ledger.
    pub lane: usize,
    /// Columns of `C^KV` (within the cache's C segment).
    pub latent: Range<usize>,
    pub uk: WeightName,
    pub uv: WeightName,
    /// Rows and columns of the block inside `uk` / `uv`.
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl BranchGeom {
    #[must_use]
    pub fn width(&self) -> usize {
        self.latent.end - self.latent.start
    }
}

fn up(kind: WeightKind, groups: usize, j: usize) -> WeightName {
    if groups > 1 {
        WeightName::grouped(kind, j)
    } else {
        WeightName::of(kind)
    }
}

/// Latent blocks the C segment splits into: 1 for MLA, g for GLA, 4 for MLRA.
pub fn latent_blocks(cfg: &AttnConfig) -> Result<usize> {
    match cfg.variant {
        Variant::Mla => Ok(1),
        Variant::Gla => Ok(cfg.g),
        Variant::Mlra => Ok(4),
        _ => Err(AttnError::Routing(format!("{} has no latent", cfg.label()))),
    }
}

/// Branches of head `i`, in ascending branch order.
pub fn branches(cfg: &AttnConfig, i: usize) -> Result<Vec<BranchGeom>> {
    cfg.validate()?;
    if i >= cfg.h {
        return Err(AttnError::config(format!("head {i} out of range for h = {}", cfg.h)));
    }
    let (h, dh, dc) = (cfg.h, cfg.d_h, cfg.d_c);
    let groups = cfg.kv_norm_groups();
    let head_cols = |ibar: usize| ibar * dh..(ibar + 1) * dh;
    let out = match cfg.variant {
        Variant::Mla => vec![BranchGeom {
            head: i,
            branch: 0,
            lane: 0,
            latent: 0..dc,
            uk: WeightName::of(WeightKind::UK),
            uv: WeightName::of(WeightKind::UV),
            rows: 0..dc,
            cols: head_cols(i),
        }],
        Variant::Gla => {
            let r = h / cfg.g;
            let (j, ibar) = (i / r, i % r);
            let w = dc / cfg.g;
            vec![BranchGeom {
                head: i,
                branch: 0,
                lane: j,
                latent: j * w..(j + 1) * w,
                uk: up(WeightKind::UK, groups, j),
                uv: up(WeightKind::UV, groups, j),
                rows: 0..w,
                cols: head_cols(ibar),
            }]
        }
        Variant::Mlra if cfg.branches == 4 => {
            let w = dc / 4;
            (0..4)
                .map(|b| BranchGeom {
                    head: i,
                    branch: b,
                    lane: b,
                    latent: b * w..(b + 1) * w,
                    uk: WeightName::of(WeightKind::UK),
                    uv: WeightName::of(WeightKind::UV),
                    rows: b * w..(b + 1) * w,
                    cols: head_cols(i),
                })
                .collect()
        }
        Variant::Mlra => {
            let w = dc / 4;
            let (gamma, ibar) = group_map(i, h);
            (0..2)
                .map(|b| {
                    let lane = 2 * gamma + b;
                    BranchGeom {
                        head: i,
                        branch: b,
                        lane,
                        latent: lane * w..(lane + 1) * w,
                        uk: WeightName::grouped(WeightKind::UK, gamma),
                        uv: WeightName::grouped(WeightKind::UV, gamma),
                        rows: b * w..(b + 1) * w,
                        cols: head_cols(ibar),
                    }
                })
                .collect()
        }
        _ => return Err(AttnError::Routing(format!("{} has no latent branches", cfg.label()))),
    };
    Ok(out)
}

/// Every head's branches, head-major.
pub fn all_branches(cfg: &AttnConfig) -> Result<Vec<BranchGeom>> {
    let mut v = Vec::new();
    for i in 0..cfg.h {
        v.extend(branches(cfg, i)?);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_map_examples() {
        assert_eq!(group_map(0, 8), (0, 0));
        assert_eq!(group_map(5, 8), (1, 1));
        for h in [2, 4, 24, 64] {
            assert_eq!(group_map(h / 2, h), (1, 0));
            assert_eq!(group_map(h / 2 - 1, h), (0, h / 2 - 1));
        }
    }

    #[test]
    fn mlra4_branch_widths() {
        let cfg = AttnConfig::loading_context("MLRA-4", 64).unwrap();
        let b = branches(&cfg, 7).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|g| g.width() == 128));
        assert_eq!(b[3].latent, 384..512);
        assert_eq!(b[3].cols, 7 * 128..8 * 128);
    }

    #[test]
    fn mlra2_uses_group_blocks() {
        let cfg = AttnConfig::tiny("MLRA-2").unwrap();
        let b = branches(&cfg, 3).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].lane, b[1].lane), (2, 3));
        assert_eq!(b[1].rows, 8..16);
        assert_eq!(b[1].latent, 24..32);
        assert_eq!(b[0].uk, WeightName::grouped(WeightKind::UK, 1));
    }

    #[test]
    fn gla_heads_partitioned() {
        let cfg = AttnConfig::tiny("GLA-2").unwrap();
        let lanes: Vec<usize> = all_branches(&cfg).unwrap().iter().map(|g| g.lane).collect();
        assert_eq!(lanes, vec![0, 0, 1, 1]);
    }

    #[test]
    fn baseline_rejected() {
        let cfg = AttnConfig::tiny("GQA").unwrap();
        assert!(matches!(branches(&cfg, 0), Err(AttnError::Routing(_))));
    }
}
