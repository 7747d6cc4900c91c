//! Full-sequence forward passes for the head-replicating and factorized
//! baselines.

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::tensor::RMS_EPS;
use attnkit_core::weights::{WeightKind, WeightName, WeightSet};
use attnkit_core::{AttnError, KvCache, Result, Tensor};
use attnkit_rope::RopeParams;

use crate::attention::{causal_attention, HeadMap};

/// Per-head outputs plus the cache the mechanism would keep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefillOutput {
    /// `[n × h × head_out_dim]`.
    pub o: Tensor,
    pub cache: KvCache,
}

impl PrefillOutput {
    /// Heads concatenated: `[n × h·head_out_dim]`.
    pub fn o_flat(&self) -> Result<Tensor> {
        let s = self.o.shape();
        self.o.reshape(&[s[0], s[1] * s[2]])
    }
}

/// Queries, keys and values as attention consumes them, before any head
/// broadcast, plus the raw cache rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub map: HeadMap,
    pub tau: f64,
    /// `[n × cache width]`, segment order of [`attnkit_core::cache_layout`].
    pub cache_rows: Tensor,
}

/// TPA factor tensors, reshaped to `[n × β × h]` (A) and `[n × β × d_h]` (C),
/// with RoPE already applied to the query and key components.
#[derive(Debug, Clone, PartialEq)]
pub struct TpaFactors {
    pub qa: Tensor,
    pub qc: Tensor,
    pub ka: Tensor,
    pub kc: Tensor,
    pub va: Tensor,
    pub vc: Tensor,
}

fn w(ws: &WeightSet, kind: WeightKind) -> Result<&Tensor> {
    ws.get(WeightName::of(kind))
}

/// Rotate each row of `x[n × k·dim]` at its token position, `dim` at a time.
pub fn rope_rows(x: &Tensor, dim: usize, base: f64, offset: usize) -> Result<Tensor> {
    let p = RopeParams::new(dim, base)?.with_offset(offset);
    let (n, width) = x.dims2("rope_rows")?;
    let mut out = x.clone();
    if width > 0 {
        for (t, row) in out.data_mut().chunks_mut(width).enumerate() {
            p.rotate(row, t)?;
        }
    }
    debug_assert_eq!(out.shape(), &[n, width]);
    Ok(out)
}

pub(crate) fn check_input(cfg: &AttnConfig, h: &Tensor) -> Result<usize> {
    let (n, d) = h.dims2("prefill input")?;
    if d != cfg.d {
        return Err(AttnError::dim("prefill input H", h.shape(), &[n, cfg.d]));
    }
    if n == 0 {
        return Err(AttnError::config("prefill needs at least one token"));
    }
    Ok(n)
}

/// `(1/β)·Aᵀ·C` per token: `a[n×β×h]`, `c[n×β×d_h]` → `[n×h×d_h]`.
pub fn tpa_expand(a: &Tensor, c: &Tensor) -> Result<Tensor> {
    let (n, beta, h, dh) = match (a.shape(), c.shape()) {
        ([n, b, h], [n2, b2, dh]) if n == n2 && b == b2 => (*n, *b, *h, *dh),
        _ => return Err(AttnError::dim("tpa_expand", a.shape(), c.shape())),
    };
    let inv = 1.0 / beta as f64;
    let mut out = vec![0.0; n * h * dh];
    for t in 0..n {
        for i in 0..h {
            let o = &mut out[(t * h + i) * dh..(t * h + i + 1) * dh];
            for b in 0..beta {
                let coef = a.data()[(t * beta + b) * h + i];
                let comp = &c.data()[(t * beta + b) * dh..(t * beta + b + 1) * dh];
                for (x, y) in o.iter_mut().zip(comp) {
                    *x += coef * y;
                }
            }
            o.iter_mut().for_each(|x| *x *= inv);
        }
    }
    Tensor::new(vec![n, h, dh], out)
}

pub fn tpa_factors(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<TpaFactors> {
    if cfg.variant != Variant::Tpa {
        return Err(AttnError::Routing(format!("{} has no TPA factors", cfg.label())));
    }
    let n = check_input(cfg, h)?;
    let (heads, dh, bq, bkv) = (cfg.h, cfg.d_h, cfg.beta_q, cfg.beta_kv);
    let proj = |kind| h.matmul(w(ws, kind)?);
    let roped = |kind, beta: usize| -> Result<Tensor> {
        rope_rows(&proj(kind)?, dh, cfg.rope_base, offset)?.reshape(&[n, beta, dh])
    };
    Ok(TpaFactors {
        qa: proj(WeightKind::AQ)?.reshape(&[n, bq, heads])?,
        qc: roped(WeightKind::CQ, bq)?,
        ka: proj(WeightKind::AK)?.reshape(&[n, bkv, heads])?,
        kc: roped(WeightKind::CK, bkv)?,
        va: proj(WeightKind::AV)?.reshape(&[n, bkv, heads])?,
        vc: proj(WeightKind::CV)?.reshape(&[n, bkv, dh])?,
    })
}

/// GTA keys: each value head's leading `d_h − d_h^R` channels followed by
/// the shared RoPE key. `vc[n×g×d_h]`, `kr[n×d_h^R]` → `[n×g×d_h]`.
pub fn gta_keys(vc: &Tensor, kr: &Tensor) -> Result<Tensor> {
    let (n, g, dh) = match vc.shape() {
        [n, g, dh] => (*n, *g, *dh),
        s => return Err(AttnError::dim("gta_keys", s, kr.shape())),
    };
    let (nr, dr) = kr.dims2("gta_keys")?;
    if nr != n || dr > dh {
        return Err(AttnError::dim("gta_keys", vc.shape(), kr.shape()));
    }
    let nope = dh - dr;
    let mut out = Vec::with_capacity(n * g * dh);
    for t in 0..n {
        for j in 0..g {
            out.extend_from_slice(&vc.data()[(t * g + j) * dh..(t * g + j) * dh + nope]);
            out.extend_from_slice(kr.row(t));
        }
    }
    Tensor::new(vec![n, g, dh], out)
}

/// Build queries, keys, values and cache rows for a baseline variant with
/// positions starting at `offset`.
pub fn project(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<Projections> {
    cfg.validate()?;
    let n = check_input(cfg, h)?;
    let (heads, dh, base) = (cfg.h, cfg.d_h, cfg.rope_base);
    let tau = cfg.tau();
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa => {
            let g = cfg.kv_heads();
            let q = rope_rows(&h.matmul(w(ws, WeightKind::Q)?)?, dh, base, offset)?;
            let k = rope_rows(&h.matmul(w(ws, WeightKind::K)?)?, dh, base, offset)?;
            let v = h.matmul(w(ws, WeightKind::V)?)?;
            let cache_rows = Tensor::concat(&[&k, &v], 1)?;
            Ok(Projections {
                q: q.reshape(&[n, heads, dh])?,
                k: k.reshape(&[n, g, dh])?,
                v: v.reshape(&[n, g, dh])?,
                map: HeadMap::Interleave(heads / g),
                tau,
                cache_rows,
            })
        }
        Variant::Mfa => {
            let wide = 2 * dh;
            let cq = h.matmul(w(ws, WeightKind::CQ)?)?.rmsnorm(RMS_EPS);
            let q = rope_rows(&cq.matmul(w(ws, WeightKind::UQ)?)?, wide, base, offset)?;
            let k = rope_rows(&h.matmul(w(ws, WeightKind::K)?)?, wide, base, offset)?;
            let v = h.matmul(w(ws, WeightKind::V)?)?;
            let cache_rows = Tensor::concat(&[&k, &v], 1)?;
            Ok(Projections {
                q: q.reshape(&[n, heads, wide])?,
                k: k.reshape(&[n, 1, wide])?,
                v: v.reshape(&[n, 1, wide])?,
                map: HeadMap::Interleave(heads),
                tau,
                cache_rows,
            })
        }
        Variant::Tpa => {
            let f = tpa_factors(cfg, ws, h, offset)?;
            let flat = |t: &Tensor| t.reshape(&[n, t.len() / n]);
            let cache_rows =
                Tensor::concat(&[&flat(&f.ka)?, &flat(&f.kc)?, &flat(&f.va)?, &flat(&f.vc)?], 1)?;
            Ok(Projections {
                q: tpa_expand(&f.qa, &f.qc)?,
                k: tpa_expand(&f.ka, &f.kc)?,
                v: tpa_expand(&f.va, &f.vc)?,
                map: HeadMap::Identity,
                tau,
                cache_rows,
            })
        }
        Variant::Gta => {
            let (g, dr) = (cfg.g, cfg.d_hr);
            let p = RopeParams::new(dr, base)?.with_offset(offset);
            let mut q = h.matmul(w(ws, WeightKind::Q)?)?;
            for (t, row) in q.data_mut().chunks_mut(heads * dh).enumerate() {
                for head in row.chunks_mut(dh) {
                    p.rotate(&mut head[dh - dr..], t)?;
                }
            }
            let vc = h.matmul(w(ws, WeightKind::KV)?)?;
            let kr = rope_rows(&h.matmul(w(ws, WeightKind::KR)?)?, dr, base, offset)?;
            let cache_rows = Tensor::concat(&[&vc, &kr], 1)?;
            let vc = vc.reshape(&[n, g, dh])?;
            Ok(Projections {
                q: q.reshape(&[n, heads, dh])?,
                k: gta_keys(&vc, &kr)?,
                v: vc,
                map: HeadMap::Interleave(heads / g),
                tau,
                cache_rows,
            })
        }
        Variant::Mla | Variant::Gla | Variant::Mlra => Err(AttnError::Routing(format!(
            "{} is a latent variant; use the latent-attention prefill",
            cfg.label()
        ))),
    }
}

/// Cache holding `rows[n × width]`, first token at position `offset`.
pub fn cache_from_rows(cfg: &AttnConfig, rows: &Tensor, offset: usize) -> Result<KvCache> {
    let mut cache = KvCache::for_config(cfg, offset)?;
    let (n, width) = rows.dims2("cache rows")?;
    if width != cache.layout().width() {
        return Err(AttnError::dim("cache rows", rows.shape(), &[n, cache.layout().width()]));
    }
    for t in 0..n {
        cache.append(rows.row(t))?;
    }
    Ok(cache)
}

/// Causal forward pass over `h[n × d]` with positions `0..n`.
pub fn prefill(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor) -> Result<PrefillOutput> {
    prefill_at(cfg, ws, h, 0)
}

/// As [`prefill`] with every position shifted by `offset`.
pub fn prefill_at(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<PrefillOutput> {
    let p = project(cfg, ws, h, offset)?;
    let o = causal_attention(&p.q, &p.k, &p.v, p.tau, p.map)?;
    Ok(PrefillOutput {
        o,
        cache: cache_from_rows(cfg, &p.cache_rows, offset)?,
    })
}
