//! Pre-norm transformer block: attention then a SiLU-gated MLP, each with
//! a residual. Forward only; used to check that every mechanism slots into
//! the same wrapper.

use attnkit_core::tensor::{silu, RMS_EPS};
use attnkit_core::weights::{WeightKind, WeightName, WeightSet};
use attnkit_core::{AttnConfig, AttnError, Result, Rng, Tensor};

use crate::gate::gated_output;
use crate::prefill::PrefillOutput;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    /// `d × d_f`, passed through SiLU.
    pub w1: Tensor,
    /// `d × d_f`.
    pub w2: Tensor,
    /// `d_f × d`.
    pub wo: Tensor,
}

impl MlpWeights {
    pub fn gaussian(d: usize, d_f: usize, sigma: f64, rng: &Rng) -> Self {
        MlpWeights {
            w1: Tensor::gaussian(&[d, d_f], sigma, &mut rng.fork("W^1")),
            w2: Tensor::gaussian(&[d, d_f], sigma, &mut rng.fork("W^2")),
            wo: Tensor::gaussian(&[d_f, d], sigma, &mut rng.fork("W^O,mlp")),
        }
    }

    #[must_use]
    pub fn element_count(&self) -> u64 {
        (self.w1.len() + self.w2.len() + self.wo.len()) as u64
    }
}

/// One block over `h[n × d]`. `attention` maps the normalized hidden states
/// to per-head outputs; the gate, when configured, reads the block input.
pub fn block_forward(
    cfg: &AttnConfig,
    ws: &WeightSet,
    mlp: &MlpWeights,
    h: &Tensor,
    attention: &dyn Fn(&Tensor) -> Result<PrefillOutput>,
) -> Result<Tensor> {
    let (n, d) = h.dims2("block input")?;
    if d != cfg.d {
        return Err(AttnError::dim("block input", h.shape(), &[n, cfg.d]));
    }
    let normed = h.rmsnorm(RMS_EPS);
    let mut o = attention(&normed)?.o_flat()?;
    if cfg.gated {
        o = gated_output(h, &o, ws.get(WeightName::of(WeightKind::G))?)?;
    }
    let h1 = h.add(&o.matmul(ws.get(WeightName::of(WeightKind::O))?)?)?;
    let normed = h1.rmsnorm(RMS_EPS);
    let act = normed.matmul(&mlp.w1)?.map(silu);
    let m = act.hadamard(&normed.matmul(&mlp.w2)?)?;
    h1.add(&m.matmul(&mlp.wo)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefill::prefill;
    use attnkit_core::{build_weights, build_weights_with, WeightInit};

    #[test]
    fn shapes_preserved_for_baselines() {
        for l in ["MHA", "MQA", "GQA", "MFA", "TPA", "GTA"] {
            for gated in [false, true] {
                let cfg = AttnConfig::tiny(l).unwrap().with_gate(gated);
                let rng = Rng::new(9);
                let ws = build_weights(&cfg, 0.1, &rng).unwrap();
                let mlp = MlpWeights::gaussian(cfg.d, 48, 0.1, &rng);
                let h = Tensor::gaussian(&[3, cfg.d], 1.0, &mut rng.fork("h"));
                let out = block_forward(&cfg, &ws, &mlp, &h, &|x| prefill(&cfg, &ws, x)).unwrap();
                assert_eq!(out.shape(), h.shape(), "{l}");
            }
        }
    }

    #[test]
    fn zero_projections_make_identity() {
        let cfg = AttnConfig::tiny("GQA").unwrap();
        let rng = Rng::new(1);
        let ws = build_weights_with(&cfg, WeightInit { sigma: 0.1, zero_output: true }, &rng).unwrap();
        let mut mlp = MlpWeights::gaussian(cfg.d, 16, 0.1, &rng);
        mlp.wo = Tensor::zeros(&[16, cfg.d]);
        let h = Tensor::gaussian(&[4, cfg.d], 1.0, &mut rng.fork("h"));
        let out = block_forward(&cfg, &ws, &mlp, &h, &|x| prefill(&cfg, &ws, x)).unwrap();
        assert_eq!(out, h);
    }
}
