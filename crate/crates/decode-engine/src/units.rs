//! Attention over the cache for individual work units: a whole head for the
//! baselines, one (head, branch) pair for the latent variants.

use serde::Serialize;

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::tensor::{dot, softmax_in_place};
use attnkit_core::weights::WeightSource;
use attnkit_core::{AttnError, CacheReader, Result, Tensor};
use attnkit_latent::{branches, calib_factors, BranchGeom};

use crate::query::{absorb_query, HeadQuery};

/// How latent keys and values are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Rebuild `k = C_(b)·W^UK` and `v = C_(b)·W^UV` for every cached row.
    Naive,
    /// Fold W^UK into the query and W^UV after the weighted latent sum, so
    /// attention runs directly on the cached latent.
    Absorbed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Unit {
    Head(usize),
    Branch(BranchGeom),
}

impl Unit {
    #[must_use]
    pub fn head(&self) -> usize {
        match self {
            Unit::Head(i) => *i,
            Unit::Branch(g) => g.head,
        }
    }

    #[must_use]
    pub fn branch(&self) -> usize {
        match self {
            Unit::Head(_) => 0,
            Unit::Branch(g) => g.branch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitOutput {
    pub head: usize,
    pub branch: usize,
    pub value: Vec<f64>,
}

/// Every unit of `heads`, head-major and branch-ascending.
pub fn units_for(cfg: &AttnConfig, heads: &[usize]) -> Result<Vec<Unit>> {
    let mut v = Vec::new();
    for &i in heads {
        if cfg.variant.is_latent() {
            v.extend(branches(cfg, i)?.into_iter().map(Unit::Branch));
        } else {
            if i >= cfg.h {
                return Err(AttnError::config(format!("head {i} out of range for h = {}", cfg.h)));
            }
            v.push(Unit::Head(i));
        }
    }
    Ok(v)
}

fn attend(logits: &mut [f64], values: &[Vec<f64>], width: usize) -> Result<Vec<f64>> {
    softmax_in_place(logits)?;
    let mut o = vec![0.0; width];
    for (p, v) in logits.iter().zip(values) {
        for (x, y) in o.iter_mut().zip(v) {
            *x += p * y;
        }
    }
    Ok(o)
}

fn seg_start(reader: &CacheReader<'_>, name: &str) -> Result<usize> {
    Ok(reader.layout().segment(name)?.start)
}

fn baseline_unit(cfg: &AttnConfig, reader: &mut CacheReader<'_>, q: &HeadQuery) -> Result<Vec<f64>> {
    let (i, h, dh, dr) = (q.head, cfg.h, cfg.d_h, cfg.d_hr);
    let n = reader.rows();
    let tau = cfg.tau();
    let mut logits = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa | Variant::Mfa => {
            let w = cfg.head_out_dim();
            let j = i / (h / cfg.kv_heads());
            let (k0, v0) = (seg_start(reader, "K")? + j * w, seg_start(reader, "V")? + j * w);
            for t in 0..n {
                logits.push(tau * dot(&q.nope, reader.read(t, k0..k0 + w)?));
                values.push(reader.read(t, v0..v0 + w)?.to_vec());
            }
        }
        Variant::Tpa => {
            let b = cfg.beta_kv;
            let inv = 1.0 / b as f64;
            let expand = |reader: &mut CacheReader<'_>, t: usize, a: &str, c: &str| -> Result<Vec<f64>> {
                let (a0, c0) = (seg_start(reader, a)?, seg_start(reader, c)?);
                let comps = reader.read(t, c0..c0 + b * dh)?;
                let mut x = vec![0.0; dh];
                for r in 0..b {
                    let coef = reader.read(t, a0 + r * h + i..a0 + r * h + i + 1)?[0];
                    for (o, y) in x.iter_mut().zip(&comps[r * dh..(r + 1) * dh]) {
                        *o += coef * y;
                    }
                }
                x.iter_mut().for_each(|o| *o *= inv);
                Ok(x)
            };
            for t in 0..n {
                let k = expand(reader, t, "KA", "KC")?;
                logits.push(tau * dot(&q.nope, &k));
                values.push(expand(reader, t, "VA", "VC")?);
            }
        }
        Variant::Gta => {
            let j = i / (h / cfg.g);
            let v0 = seg_start(reader, "V")? + j * dh;
            let r0 = seg_start(reader, "KR")?;
            for t in 0..n {
                let v = reader.read(t, v0..v0 + dh)?;
                let kr = reader.read(t, r0..r0 + dr)?;
                let s = dot(&q.nope[..dh - dr], &v[..dh - dr]) + dot(&q.nope[dh - dr..], kr);
                logits.push(tau * s);
                values.push(v.to_vec());
            }
        }
        _ => return Err(AttnError::Routing(format!("{} decodes by branch", cfg.label()))),
    }
    attend(&mut logits, &values, cfg.head_out_dim())
}

fn branch_unit(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    reader: &mut CacheReader<'_>,
    q: &HeadQuery,
    g: &BranchGeom,
    mode: Mode,
) -> Result<Vec<f64>> {
    let (dh, dr) = (cfg.d_h, cfg.d_hr);
    let n = reader.rows();
    let tau = cfg.tau();
    let c0 = seg_start(reader, "C")?;
    let r0 = seg_start(reader, "KR")?;
    let lat = c0 + g.latent.start..c0 + g.latent.end;
    let wk = src.block(g.uk, g.rows.clone(), g.cols.clone())?;
    let wv = src.block(g.uv, g.rows.clone(), g.cols.clone())?;
    reader.set_lane(Some(g.lane));
    let mut logits = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let out = match mode {
        Mode::Naive => {
            for t in 0..n {
                let c = Tensor::new(vec![1, g.width()], reader.read(t, lat.clone())?.to_vec())?;
                let k = c.matmul(&wk)?;
                let kr = reader.read(t, r0..r0 + dr)?;
                logits.push(tau * (dot(&q.nope, k.data()) + dot(&q.rope, kr)));
                rows.push(c.matmul(&wv)?.into_data());
            }
            attend(&mut logits, &rows, dh)?
        }
        Mode::Absorbed => {
            let q_nope = Tensor::new(vec![1, dh], q.nope.clone())?;
            let q_tilde = absorb_query(&q_nope, &wk.reshape(&[1, g.width(), dh])?)?;
            for t in 0..n {
                let c = reader.read(t, lat.clone())?;
                let kr = reader.read(t, r0..r0 + dr)?;
                logits.push(tau * (dot(q_tilde.data(), c) + dot(&q.rope, kr)));
                rows.push(c.to_vec());
            }
            let z = attend(&mut logits, &rows, g.width())?;
            Tensor::new(vec![1, g.width()], z)?.matmul(&wv)?.into_data()
        }
    };
    reader.set_lane(None);
    Ok(out)
}

/// Run `units` against every row the reader can see.
pub fn decode_units(
    cfg: &AttnConfig,
    src: &dyn WeightSource,
    reader: &mut CacheReader<'_>,
    queries: &[HeadQuery],
    units: &[Unit],
    mode: Mode,
) -> Result<Vec<UnitOutput>> {
    if reader.rows() == 0 {
        return Err(AttnError::config("decode needs at least one cached row"));
    }
    units
        .iter()
        .map(|u| {
            let q = queries
                .iter()
                .find(|q| q.head == u.head())
                .ok_or_else(|| AttnError::Integrity(format!("no query for head {}", u.head())))?;
            let value = match u {
                Unit::Head(_) => baseline_unit(cfg, reader, q)?,
                Unit::Branch(g) => branch_unit(cfg, src, reader, q, g, mode)?,
            };
            Ok(UnitOutput {
                head: u.head(),
                branch: u.branch(),
                value,
            })
        })
        .collect()
}

/// Per-head outputs `[heads.len() × head_out_dim]`: branches of each head
/// summed in ascending branch order, then scaled by α_attn for MLRA. Every
/// head in `heads` must have all its branches present exactly once.
pub fn reduce_units(cfg: &AttnConfig, outputs: &[UnitOutput], heads: &[usize]) -> Result<Tensor> {
    let w = cfg.head_out_dim();
    let nb = cfg.branches_per_head();
    let alpha = if cfg.variant == Variant::Mlra {
        calib_factors(cfg).alpha_attn.value()
    } else {
        1.0
    };
    let mut data = Vec::with_capacity(heads.len() * w);
    for &i in heads {
        let mut parts: Vec<&UnitOutput> = outputs.iter().filter(|u| u.head == i).collect();
        parts.sort_by_key(|u| u.branch);
        let got: Vec<usize> = parts.iter().map(|u| u.branch).collect();
        if got != (0..nb).collect::<Vec<_>>() {
            return Err(AttnError::Integrity(format!(
                "head {i} has branches {got:?}, expected 0..{nb}"
            )));
        }
        let mut acc = parts[0].value.clone();
        for p in &parts[1..] {
            for (a, b) in acc.iter_mut().zip(&p.value) {
                *a += b;
            }
        }
        data.extend(acc.iter().map(|x| x * alpha));
    }
    Tensor::new(vec![heads.len(), w], data)
}
