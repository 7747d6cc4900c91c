//! Causal scaled dot-product attention over per-head tensors.

use attnkit_core::tensor::{dot, softmax_in_place};
use attnkit_core::{AttnError, Result, Tensor};

/// Which key/value head a query head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMap {
    /// Query head `i` reads key/value head `i`.
    Identity,
    /// Query head `i` reads key/value head `i / r` (RepeatInterleave by `r`).
    Interleave(usize),
}

impl HeadMap {
    #[must_use]
    pub fn kv_head(self, i: usize) -> usize {
        match self {
            HeadMap::Identity => i,
            HeadMap::Interleave(r) => i / r,
        }
    }
}

fn dims3(t: &Tensor, op: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(AttnError::dim(op, s, &[0, 0, 0])),
    }
}

/// `q[n×h×d_k]`, `k[n×g×d_k]`, `v[n×g×d_v]` → `[n×h×d_v]`. Token `t` sees
/// tokens `0..=t`; later logits are set to −∞ before the softmax. Shared
/// heads are broadcast through `map`, never copied.
pub fn causal_attention(q: &Tensor, k: &Tensor, v: &Tensor, tau: f64, map: HeadMap) -> Result<Tensor> {
    let (n, h, dk) = dims3(q, "attention q")?;
    let (nk, g, dk2) = dims3(k, "attention k")?;
    let (nv, gv, dv) = dims3(v, "attention v")?;
    if nk != n || nv != n || dk2 != dk || gv != g {
        return Err(AttnError::dim("attention q/k/v", q.shape(), k.shape()));
    }
    if h > 0 && map.kv_head(h - 1) >= g {
        return Err(AttnError::dim("attention head map", q.shape(), k.shape()));
    }
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0; n * h * dv];
    let mut logits = vec![0.0; n];
    for t in 0..n {
        for i in 0..h {
            let j = map.kv_head(i);
            let qrow = &qd[(t * h + i) * dk..(t * h + i + 1) * dk];
            for (s, l) in logits.iter_mut().enumerate() {
                *l = if s <= t {
                    tau * dot(qrow, &kd[(s * g + j) * dk..(s * g + j + 1) * dk])
                } else {
                    f64::NEG_INFINITY
                };
            }
            softmax_in_place(&mut logits)?;
            let orow = &mut out[(t * h + i) * dv..(t * h + i + 1) * dv];
            for (s, p) in logits.iter().enumerate().take(t + 1) {
                let vrow = &vd[(s * g + j) * dv..(s * g + j + 1) * dv];
                for (o, x) in orow.iter_mut().zip(vrow) {
                    *o += p * x;
                }
            }
        }
    }
    Tensor::new(vec![n, h, dv], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnkit_core::Rng;

    fn naive(q: &Tensor, k: &Tensor, v: &Tensor, tau: f64) -> Tensor {
        let (n, h, dk) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let dv = v.shape()[2];
        let mut out = Tensor::zeros(&[n, h, dv]);
        for t in 0..n {
            for i in 0..h {
                let mut w: Vec<f64> = (0..=t)
                    .map(|s| tau * (0..dk).map(|c| q.at(&[t, i, c]) * k.at(&[s, i, c])).sum::<f64>())
                    .collect();
                let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                w.iter_mut().for_each(|x| *x = (*x - m).exp());
                let z: f64 = w.iter().sum();
                for c in 0..dv {
                    let acc: f64 = (0..=t).map(|s| w[s] / z * v.at(&[s, i, c])).sum();
                    out.set(&[t, i, c], acc);
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Rng::new(2);
        let q = Tensor::gaussian(&[5, 3, 4], 1.0, &mut rng);
        let k = Tensor::gaussian(&[5, 3, 4], 1.0, &mut rng);
        let v = Tensor::gaussian(&[5, 3, 6], 1.0, &mut rng);
        let a = causal_attention(&q, &k, &v, 0.5, HeadMap::Identity).unwrap();
        assert!(a.max_abs_diff(&naive(&q, &k, &v, 0.5)).unwrap() < 1e-14);
    }

    #[test]
    fn first_token_sees_itself() {
        let mut rng = Rng::new(3);
        let q = Tensor::gaussian(&[3, 2, 4], 1.0, &mut rng);
        let k = Tensor::gaussian(&[3, 1, 4], 1.0, &mut rng);
        let v = Tensor::gaussian(&[3, 1, 4], 1.0, &mut rng);
        let a = causal_attention(&q, &k, &v, 1.0, HeadMap::Interleave(2)).unwrap();
        assert_eq!(&a.data()[..4], &v.data()[..4]);
        assert_eq!(&a.data()[4..8], &v.data()[..4]);
    }

    #[test]
    fn broadcast_equals_replication() {
        let mut rng = Rng::new(4);
        let q = Tensor::gaussian(&[4, 6, 3], 1.0, &mut rng);
        let k = Tensor::gaussian(&[4, 2, 3], 1.0, &mut rng);
        let v = Tensor::gaussian(&[4, 2, 5], 1.0, &mut rng);
        let a = causal_attention(&q, &k, &v, 0.7, HeadMap::Interleave(3)).unwrap();
        let kr = k.repeat_interleave(1, 3).unwrap();
        let vr = v.repeat_interleave(1, 3).unwrap();
        let b = causal_attention(&q, &kr, &vr, 0.7, HeadMap::Identity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_head_map_rejected() {
        let q = Tensor::zeros(&[1, 4, 2]);
        let k = Tensor::zeros(&[1, 1, 2]);
        assert!(causal_attention(&q, &k, &k, 1.0, HeadMap::Interleave(2)).is_err());
    }
}
