//! Full-sequence forward passes for MLA, GLA-g, MLRA-2 and MLRA-4.

use attnkit_core::config::{AttnConfig, Variant};
use attnkit_core::tensor::RMS_EPS;
use attnkit_core::weights::{sub_block, WeightKind, WeightName, WeightSet};
use attnkit_core::{AttnError, Result, Tensor};
use attnkit_zoo::{cache_from_rows, causal_attention, rope_rows, HeadMap, PrefillOutput};

use crate::geometry::{all_branches, BranchGeom};
use crate::scale::{calib_factors, ScaleFactors};

/// Everything the latent mechanisms derive from `H` before attention.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentProjections {
    /// `[n × h × d_h]`.
    pub q_nope: Tensor,
    /// `[n × h × d_h^R]`, rotated.
    pub q_rope: Tensor,
    /// `[n × d_c]`, scaled by α_kv; per-group latents side by side.
    pub c: Tensor,
    /// `[n × d_h^R]`, rotated, shared by every head.
    pub kr: Tensor,
    pub scale: ScaleFactors,
}

fn route(cfg: &AttnConfig) -> Result<()> {
    if cfg.variant.is_latent() {
        Ok(())
    } else {
        Err(AttnError::Routing(format!(
            "{} is not a latent variant; use the baseline prefill",
            cfg.label()
        )))
    }
}

/// `α·RMSNorm(H·W)` for each normalization group, concatenated.
pub fn kv_latent(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor) -> Result<Tensor> {
    let alpha = calib_factors(cfg).alpha_kv.value();
    let groups = cfg.kv_norm_groups();
    if groups == 1 {
        return Ok(h.matmul(ws.get(WeightName::of(WeightKind::DKV))?)?.rmsnorm(RMS_EPS).scale(alpha));
    }
    let parts = (0..groups)
        .map(|j| {
            Ok(h.matmul(ws.get(WeightName::grouped(WeightKind::DKV, j))?)?
                .rmsnorm(RMS_EPS)
                .scale(alpha))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&parts.iter().collect::<Vec<_>>(), 1)
}

/// `α_q·RMSNorm(H·W^DQ)`.
pub fn query_latent(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor) -> Result<Tensor> {
    let alpha = calib_factors(cfg).alpha_q.value();
    Ok(h.matmul(ws.get(WeightName::of(WeightKind::DQ))?)?.rmsnorm(RMS_EPS).scale(alpha))
}

pub fn latent_project(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<LatentProjections> {
    route(cfg)?;
    cfg.validate()?;
    let (n, d) = h.dims2("latent input")?;
    if d != cfg.d || n == 0 {
        return Err(AttnError::dim("latent input H", h.shape(), &[n.max(1), cfg.d]));
    }
    let (heads, dh, dr, base) = (cfg.h, cfg.d_h, cfg.d_hr, cfg.rope_base);
    let cq = query_latent(cfg, ws, h)?;
    let q_nope = cq.matmul(ws.get(WeightName::of(WeightKind::UQ))?)?;
    let q_rope = rope_rows(&cq.matmul(ws.get(WeightName::of(WeightKind::QR))?)?, dr, base, offset)?;
    let kr = rope_rows(&h.matmul(ws.get(WeightName::of(WeightKind::KR))?)?, dr, base, offset)?;
    Ok(LatentProjections {
        q_nope: q_nope.reshape(&[n, heads, dh])?,
        q_rope: q_rope.reshape(&[n, heads, dr])?,
        c: kv_latent(cfg, ws, h)?,
        kr,
        scale: calib_factors(cfg),
    })
}

/// One head's attention restricted to one branch: keys
/// `[C_(b)·W^UK_(b),(i) ‖ K^RoPE]`, values `C_(b)·W^UV_(b),(i)`.
fn branch_attention(cfg: &AttnConfig, ws: &WeightSet, p: &LatentProjections, g: &BranchGeom) -> Result<Tensor> {
    let n = p.c.shape()[0];
    let (dh, dr) = (cfg.d_h, cfg.d_hr);
    let cb = p.c.slice(1, g.latent.clone())?;
    let k_nope = cb.matmul(&sub_block(ws.get(g.uk)?, g.rows.clone(), g.cols.clone())?)?;
    let v = cb.matmul(&sub_block(ws.get(g.uv)?, g.rows.clone(), g.cols.clone())?)?;
    let q = Tensor::concat(
        &[
            &p.q_nope.slice(1, g.head..g.head + 1)?.reshape(&[n, dh])?,
            &p.q_rope.slice(1, g.head..g.head + 1)?.reshape(&[n, dr])?,
        ],
        1,
    )?;
    let k = Tensor::concat(&[&k_nope, &p.kr], 1)?;
    causal_attention(
        &q.reshape(&[n, 1, dh + dr])?,
        &k.reshape(&[n, 1, dh + dr])?,
        &v.reshape(&[n, 1, dh])?,
        cfg.tau(),
        HeadMap::Identity,
    )
}

/// Unscaled per-branch outputs, one `[n × h × d_h]` tensor per branch
/// index. MLA and GLA have a single branch.
pub fn branch_outputs_at(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<Vec<Tensor>> {
    let p = latent_project(cfg, ws, h, offset)?;
    branch_outputs_from(cfg, ws, &p)
}

pub fn branch_outputs(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor) -> Result<Vec<Tensor>> {
    branch_outputs_at(cfg, ws, h, 0)
}

fn branch_outputs_from(cfg: &AttnConfig, ws: &WeightSet, p: &LatentProjections) -> Result<Vec<Tensor>> {
    let n = p.c.shape()[0];
    let (heads, dh) = (cfg.h, cfg.d_h);
    let nb = cfg.branches_per_head();
    let mut outs = vec![vec![0.0; n * heads * dh]; nb];
    for g in all_branches(cfg)? {
        let o = branch_attention(cfg, ws, p, &g)?;
        let dst = &mut outs[g.branch];
        for t in 0..n {
            let at = (t * heads + g.head) * dh;
            dst[at..at + dh].copy_from_slice(o.row(t));
        }
    }
    outs.into_iter().map(|d| Tensor::new(vec![n, heads, dh], d)).collect()
}

/// `α_attn·Σ_b O_b` with branches summed in ascending order.
pub fn reduce_branches(branches: &[Tensor], alpha_attn: f64) -> Result<Tensor> {
    let first = branches
        .first()
        .ok_or_else(|| AttnError::config("no branches to reduce"))?;
    let mut acc = first.clone();
    for b in &branches[1..] {
        acc = acc.add(b)?;
    }
    Ok(acc.scale(alpha_attn))
}

pub fn latent_prefill(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor) -> Result<PrefillOutput> {
    latent_prefill_at(cfg, ws, h, 0)
}

/// Causal forward pass with positions starting at `offset`. Cache rows are
/// `[C^KV ‖ K^RoPE]`.
pub fn latent_prefill_at(cfg: &AttnConfig, ws: &WeightSet, h: &Tensor, offset: usize) -> Result<PrefillOutput> {
    let p = latent_project(cfg, ws, h, offset)?;
    let outs = branch_outputs_from(cfg, ws, &p)?;
    let alpha = if cfg.variant == Variant::Mlra {
        p.scale.alpha_attn.value()
    } else {
        1.0
    };
    let o = reduce_branches(&outs, alpha)?;
    let rows = Tensor::concat(&[&p.c, &p.kr], 1)?;
    Ok(PrefillOutput {
        o,
        cache: cache_from_rows(cfg, &rows, offset)?,
    })
}
