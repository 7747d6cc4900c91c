//! One draw of every attention component under i.i.d. Gaussian weights.
//!
//! `H` is a Gaussian row, RMS-normalized. Products that reach a single
//! output element are materialized against fresh weight columns. The wide
//! down-projections into the latents use the fact that, for a fixed row `h`
//! and i.i.d. N(0, σ²) weights, `h·W` is distributed as `σ‖h‖·z` with `z`
//! standard normal; the latent is then RMS-normalized as in the forward pass.

use attnkit_core::config::AttnConfig;
use attnkit_core::tensor::{dot, rmsnorm_in_place, RMS_EPS};
use attnkit_core::{Result, Rng};
use attnkit_latent::{calib_factors, latent_blocks};
use attnkit_rope::RopeParams;

/// Largest position a component is rotated to.
const MAX_POS: usize = 4096;

#[derive(Debug, Clone)]
pub(crate) struct Sampler {
    d: usize,
    d_cq: usize,
    dr: usize,
    /// Width each KV latent is normalized over.
    norm_width: usize,
    /// Width of the latent block one branch reads.
    branch_width: usize,
    alpha_q: f64,
    alpha_kv: f64,
    sigma: f64,
    rope: RopeParams,
}

/// Component order in every sample.
pub(crate) const COMPONENTS: [&str; 5] = ["K^RoPE", "K^NoPE", "V", "Q^NoPE", "Q^RoPE"];

impl Sampler {
    pub(crate) fn new(cfg: &AttnConfig, sigma: f64) -> Result<Self> {
        let f = calib_factors(cfg);
        Ok(Sampler {
            d: cfg.d,
            d_cq: cfg.d_cq,
            dr: cfg.d_hr,
            norm_width: cfg.d_c / cfg.kv_norm_groups(),
            branch_width: cfg.d_c / latent_blocks(cfg)?,
            alpha_q: f.alpha_q.value(),
            alpha_kv: f.alpha_kv.value(),
            sigma,
            rope: RopeParams::new(cfg.d_hr, cfg.rope_base)?,
        })
    }

    /// Predicted variances in [`COMPONENTS`] order.
    pub(crate) fn predicted(&self) -> [f64; 5] {
        let s2 = self.sigma * self.sigma;
        let kv = self.alpha_kv * self.alpha_kv * self.branch_width as f64 * s2;
        let q = self.alpha_q * self.alpha_q * self.d_cq as f64 * s2;
        [self.d as f64 * s2, kv, kv, q, q]
    }

    fn column(&self, x: &[f64], r: &mut Rng) -> f64 {
        let mut w = vec![0.0; x.len()];
        r.fill_normal(&mut w);
        self.sigma * dot(x, &w)
    }

    /// Latent of `width` from a row of norm `norm`, normalized and scaled.
    fn latent(&self, norm: f64, width: usize, alpha: f64, r: &mut Rng) -> Vec<f64> {
        let mut x = vec![0.0; width];
        r.fill_normal(&mut x);
        x.iter_mut().for_each(|v| *v *= self.sigma * norm);
        rmsnorm_in_place(&mut x, RMS_EPS);
        x.iter_mut().for_each(|v| *v *= alpha);
        x
    }

    /// A rotated element: one RoPE pair materialized from `x` and fresh
    /// weight columns, rotated at a random position inside a full-width
    /// vector.
    fn rotated(&self, x: &[f64], r: &mut Rng) -> Result<f64> {
        let pair = r.below(0, self.dr / 2);
        let pos = r.below(0, MAX_POS);
        let mut v = vec![0.0; self.dr];
        v[2 * pair] = self.column(x, r);
        v[2 * pair + 1] = self.column(x, r);
        self.rope.rotate(&mut v, pos)?;
        Ok(v[2 * pair])
    }

    pub(crate) fn draw(&self, r: &mut Rng) -> Result<[f64; 5]> {
        let mut h = vec![0.0; self.d];
        r.fill_normal(&mut h);
        rmsnorm_in_place(&mut h, RMS_EPS);
        let norm = dot(&h, &h).sqrt();
        let k_rope = self.rotated(&h, r)?;
        let c = self.latent(norm, self.norm_width, self.alpha_kv, r);
        let cb = &c[..self.branch_width];
        let k_nope = self.column(cb, r);
        let v = self.column(cb, r);
        let cq = self.latent(norm, self.d_cq, self.alpha_q, r);
        let q_nope = self.column(&cq, r);
        let q_rope = self.rotated(&cq, r)?;
        Ok([k_rope, k_nope, v, q_nope, q_rope])
    }
}
