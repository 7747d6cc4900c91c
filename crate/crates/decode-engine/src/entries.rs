//! The cache row a new token contributes, computed column-piece by
//! column-piece so a device only touches the weights behind the columns it
//! stores.

use std::ops::Range;

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::tensor::{rmsnorm_in_place, RMS_EPS};
use attnkit_core::weights::{WeightKind, WeightName, WeightSource};
use attnkit_core::{cache_layout, AttnError, Result};
use attnkit_latent::calib_factors;
use attnkit_rope::RopeParams;

/// A run of cache columns produced together from one weight block.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    /// Global cache columns.
    pub cols: Range<usize>,
    pub weight: WeightName,
    /// Columns of `weight` feeding the piece.
    pub wcols: Range<usize>,
    /// RMS-normalize the projection, then scale by this factor.
    pub norm: Option<f64>,
    /// Rotate the whole piece, this many channels at a time.
    pub rope: Option<usize>,
}

fn run(pieces: &mut Vec<Piece>, start: &mut usize, width: usize, weight: WeightName, wcols: Range<usize>, rope: Option<usize>) {
    pieces.push(Piece {
        cols: *start..*start + width,
        weight,
        wcols,
        norm: None,
        rope,
    });
    *start += width;
}

/// Cache pieces in column order.
pub fn pieces(cfg: &AttnConfig) -> Result<Vec<Piece>> {
    let layout = cache_layout(cfg)?;
    let (h, dh, dr) = (cfg.h, cfg.d_h, cfg.d_hr);
    let one = WeightName::of;
    let mut v = Vec::new();
    let mut at = 0;
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa | Variant::Mfa => {
            let (heads, width) = if cfg.variant == Variant::Mfa {
                (1, 2 * dh)
            } else {
                (cfg.kv_heads(), dh)
            };
            for j in 0..heads {
                run(&mut v, &mut at, width, one(WeightKind::K), j * width..(j + 1) * width, Some(width));
            }
            for j in 0..heads {
                run(&mut v, &mut at, width, one(WeightKind::V), j * width..(j + 1) * width, None);
            }
        }
        Variant::Tpa => {
            let b = cfg.beta_kv;
            for (a, c, rope) in [
                (WeightKind::AK, WeightKind::CK, Some(dh)),
                (WeightKind::AV, WeightKind::CV, None),
            ] {
                for col in 0..b * h {
                    run(&mut v, &mut at, 1, one(a), col..col + 1, None);
                }
                for k in 0..b {
                    run(&mut v, &mut at, dh, one(c), k * dh..(k + 1) * dh, rope);
                }
            }
        }
        Variant::Gta => {
            for j in 0..cfg.g {
                run(&mut v, &mut at, dh, one(WeightKind::KV), j * dh..(j + 1) * dh, None);
            }
            run(&mut v, &mut at, dr, one(WeightKind::KR), 0..dr, Some(dr));
        }
        Variant::Mla | Variant::Gla | Variant::Mlra => {
            let groups = cfg.kv_norm_groups();
            let w = cfg.d_c / groups;
            let alpha = calib_factors(cfg).alpha_kv.value();
            for j in 0..groups {
                let name = if groups == 1 {
                    one(WeightKind::DKV)
                } else {
                    WeightName::grouped(WeightKind::DKV, j)
                };
                v.push(Piece {
                    cols: at..at + w,
                    weight: name,
                    wcols: 0..w,
                    norm: Some(alpha),
                    rope: None,
                });
                at += w;
            }
            run(&mut v, &mut at, dr, one(WeightKind::KR), 0..dr, Some(dr));
        }
    }
    debug_assert_eq!(at, layout.width());
    Ok(v)
}

/// `h_t · W[:, cols]`, optionally normalized and rotated at `pos`.
pub(crate) fn project_piece(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    h_t: &[f64],
    pos: usize,
    weight: WeightName,
    wcols: Range<usize>,
    norm: Option<f64>,
    rope: Option<usize>,
) -> Result<Vec<f64>> {
    let d = h_t.len();
    let block = src.block(weight, 0..d, wcols.clone())?;
    let width = wcols.end - wcols.start;
    let mut out = vec![0.0; width];
    for (m, x) in h_t.iter().enumerate() {
        let wrow = &block.data()[m * width..(m + 1) * width];
        for (o, w) in out.iter_mut().zip(wrow) {
            *o += x * w;
        }
    }
    if let Some(alpha) = norm {
        rmsnorm_in_place(&mut out, RMS_EPS);
        out.iter_mut().for_each(|x| *x *= alpha);
    }
    if let Some(dim) = rope {
        RopeParams::new(dim, cfg.rope_base)?.rotate(&mut out, pos)?;
    }
    Ok(out)
}

/// Values of the new token's cache row at the (ascending) global columns
/// `cols`. Only pieces that overlap `cols` are computed.
pub fn token_entries(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    h_t: &[f64],
    pos: usize,
    cols: &[usize],
) -> Result<Vec<f64>> {
    if h_t.len() != cfg.d {
        return Err(AttnError::dim("token_entries h_t", &[h_t.len()], &[cfg.d]));
    }
    let mut out = Vec::with_capacity(cols.len());
    let mut next = 0;
    for p in pieces(cfg)? {
        let lo = next;
        while next < cols.len() && cols[next] < p.cols.end {
            if cols[next] < p.cols.start {
                return Err(AttnError::Integrity(format!("columns not ascending at {}", cols[next])));
            }
            next += 1;
        }
        if next == lo {
            continue;
        }
        let vals = project_piece(cfg, src, h_t, pos, p.weight, p.wcols.clone(), p.norm, p.rope)?;
        out.extend(cols[lo..next].iter().map(|c| vals[c - p.cols.start]));
    }
    if next != cols.len() {
        return Err(AttnError::Integrity(format!("column {} beyond cache width", cols[next])));
    }
    Ok(out)
}
