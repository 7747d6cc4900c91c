//! Per-head queries for the token being decoded.

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::weights::{WeightKind, WeightName, WeightSource};
use attnkit_core::{AttnError, Result, Tensor};
use attnkit_latent::{branches, calib_factors, BranchGeom};
use attnkit_rope::RopeParams;

use crate::entries::project_piece;

/// One head's query. Baselines keep the whole (already rotated) query in
/// `nope`; latent variants split it into the content part and the rotated
/// part `rope` that meets the shared RoPE key.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadQuery {
    pub head: usize,
    pub nope: Vec<f64>,
    pub rope: Vec<f64>,
}

/// Queries for `heads` of the token `h_t` at position `pos`. Query
/// down-projections are evaluated in full; up-projections only for the
/// requested heads.
pub fn queries(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    h_t: &[f64],
    pos: usize,
    heads: &[usize],
) -> Result<Vec<HeadQuery>> {
    if h_t.len() != cfg.d {
        return Err(AttnError::dim("queries h_t", &[h_t.len()], &[cfg.d]));
    }
    if let Some(&bad) = heads.iter().find(|&&i| i >= cfg.h) {
        return Err(AttnError::config(format!("head {bad} out of range for h = {}", cfg.h)));
    }
    let (h, dh, dr) = (cfg.h, cfg.d_h, cfg.d_hr);
    let one = WeightName::of;
    let piece = |x: &[f64], kind, cols: std::ops::Range<usize>, norm, rope| {
        project_piece(cfg, src, x, pos, one(kind), cols, norm, rope)
    };
    let mut out = Vec::with_capacity(heads.len());
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa => {
            for &i in heads {
                let q = piece(h_t, WeightKind::Q, i * dh..(i + 1) * dh, None, Some(dh))?;
                out.push(HeadQuery { head: i, nope: q, rope: Vec::new() });
            }
        }
        Variant::Mfa => {
            let cq = piece(h_t, WeightKind::CQ, 0..cfg.d_cq, Some(1.0), None)?;
            let w = 2 * dh;
            for &i in heads {
                let q = piece(&cq, WeightKind::UQ, i * w..(i + 1) * w, None, Some(w))?;
                out.push(HeadQuery { head: i, nope: q, rope: Vec::new() });
            }
        }
        Variant::Tpa => {
            let bq = cfg.beta_q;
            let qc = piece(h_t, WeightKind::CQ, 0..bq * dh, None, Some(dh))?;
            for &i in heads {
                let mut q = vec![0.0; dh];
                for b in 0..bq {
                    let a = piece(h_t, WeightKind::AQ, b * h + i..b * h + i + 1, None, None)?[0];
                    for (x, c) in q.iter_mut().zip(&qc[b * dh..(b + 1) * dh]) {
                        *x += a * c;
                    }
                }
                let inv = 1.0 / bq as f64;
                q.iter_mut().for_each(|x| *x *= inv);
                out.push(HeadQuery { head: i, nope: q, rope: Vec::new() });
            }
        }
        Variant::Gta => {
            let p = RopeParams::new(dr, cfg.rope_base)?;
            for &i in heads {
                let mut q = piece(h_t, WeightKind::Q, i * dh..(i + 1) * dh, None, None)?;
                p.rotate(&mut q[dh - dr..], pos)?;
                out.push(HeadQuery { head: i, nope: q, rope: Vec::new() });
            }
        }
        Variant::Mla | Variant::Gla | Variant::Mlra => {
            let alpha_q = calib_factors(cfg).alpha_q.value();
            let cq = piece(h_t, WeightKind::DQ, 0..cfg.d_cq, Some(alpha_q), None)?;
            for &i in heads {
                out.push(HeadQuery {
                    head: i,
                    nope: piece(&cq, WeightKind::UQ, i * dh..(i + 1) * dh, None, None)?,
                    rope: piece(&cq, WeightKind::QR, i * dr..(i + 1) * dr, None, Some(dr))?,
                });
            }
        }
    }
    Ok(out)
}

/// `Q̃[i] = Q^NoPE[i]·W_(i)ᵀ`: `q_nope[h × d_h]`, per-head key blocks
/// `wuk[h × w × d_h]` (latent rows by head columns) → `[h × w]`.
pub fn absorb_query(q_nope: &Tensor, wuk: &Tensor) -> Result<Tensor> {
    let (h, w, dh) = match wuk.shape() {
        [h, w, dh] => (*h, *w, *dh),
        s => return Err(AttnError::dim("absorb_query W^UK", s, q_nope.shape())),
    };
    let mut t = Vec::with_capacity(h * dh * w);
    for i in 0..h {
        let blk = Tensor::new(vec![w, dh], wuk.data()[i * w * dh..(i + 1) * w * dh].to_vec())?;
        t.extend_from_slice(blk.transpose()?.data());
    }
    q_nope.head_contract(&Tensor::new(vec![h, dh, w], t)?)
}

/// Queries for one branch index in the absorbed logit space.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbedQuery {
    pub branch: usize,
    /// `[h × w]` with `w` the branch's latent width.
    pub q_tilde: Tensor,
    /// `[h × d_h^R]`.
    pub q_rope: Tensor,
}

impl AbsorbedQuery {
    /// Per-head logit dimension `w + d_h^R`.
    #[must_use]
    pub fn logit_dim(&self) -> usize {
        self.q_tilde.shape()[1] + self.q_rope.shape()[1]
    }
}

/// Absorbed queries for every head, one entry per branch index. `qs` must
/// hold every head in order.
pub fn absorbed_queries(cfg: &AttnConfig, src: &dyn WeightSource, qs: &[HeadQuery]) -> Result<Vec<AbsorbedQuery>> {
    if qs.len() != cfg.h || qs.iter().enumerate().any(|(i, q)| q.head != i) {
        return Err(AttnError::config("absorbed_queries needs every head in order"));
    }
    let geoms: Vec<Vec<BranchGeom>> = (0..cfg.h).map(|i| branches(cfg, i)).collect::<Result<_>>()?;
    let (h, dh, dr) = (cfg.h, cfg.d_h, cfg.d_hr);
    let nope = Tensor::new(vec![h, dh], qs.iter().flat_map(|q| q.nope.iter().copied()).collect())?;
    let rope = Tensor::new(vec![h, dr], qs.iter().flat_map(|q| q.rope.iter().copied()).collect())?;
    (0..cfg.branches_per_head())
        .map(|b| {
            let w = geoms[0][b].width();
            let mut blocks = Vec::with_capacity(h * w * dh);
            for g in geoms.iter().map(|gs| &gs[b]) {
                blocks.extend(src.block(g.uk, g.rows.clone(), g.cols.clone())?.into_data());
            }
            Ok(AbsorbedQuery {
                branch: b,
                q_tilde: absorb_query(&nope, &Tensor::new(vec![h, w, dh], blocks)?)?,
                q_rope: rope.clone(),
            })
        })
        .collect()
}
