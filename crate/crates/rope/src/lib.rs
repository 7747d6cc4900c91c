//! Rotary position embedding over interleaved pairs `(2ℓ, 2ℓ+1)`.
//!
//! Pair ℓ at position `t` is rotated by `t·θ_ℓ` with `θ_ℓ = base^(−2ℓ/d_r)`.
//! Positions are absolute token indices plus an optional offset, which is
//! how left padding or a joint shift is modelled.

use attnkit_core::tensor::dot;
use attnkit_core::{AttnError, Result, Tensor};

pub use attnkit_core::config::DEFAULT_ROPE_BASE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeParams {
    dim: usize,
    base: f64,
    offset: usize,
}

impl RopeParams {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(AttnError::config(format!("RoPE dim must be even and positive, got {dim}")));
        }
        if !(base.is_finite() && base > 0.0) {
            return Err(AttnError::config(format!("RoPE base must be positive, got {base}")));
        }
        Ok(RopeParams { dim, base, offset: 0 })
    }

    /// Shift every position by `offset`.
    #[must_use]
    pub fn with_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[must_use]
    pub fn base(&self) -> f64 {
        self.base
    }

    #[must_use]
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Angular frequency of pair `l`.
    #[must_use]
    pub fn theta(&self, l: usize) -> f64 {
        self.base.powf(-2.0 * l as f64 / self.dim as f64)
    }

    /// Rotate `x` in place as if it sat at position `pos`. `x` may hold
    /// several `dim`-wide heads back to back; each is rotated identically.
    pub fn rotate(&self, x: &mut [f64], pos: usize) -> Result<()> {
        if x.len() % self.dim != 0 {
            return Err(AttnError::dim("rope rotate", &[x.len()], &[self.dim]));
        }
        let t = (pos + self.offset) as f64;
        let half = self.dim / 2;
        let (mut sin, mut cos) = (Vec::with_capacity(half), Vec::with_capacity(half));
        for l in 0..half {
            let (s, c) = (t * self.theta(l)).sin_cos();
            sin.push(s);
            cos.push(c);
        }
        for head in x.chunks_mut(self.dim) {
            for l in 0..half {
                let (a, b) = (head[2 * l], head[2 * l + 1]);
                head[2 * l] = a * cos[l] - b * sin[l];
                head[2 * l + 1] = a * sin[l] + b * cos[l];
            }
        }
        Ok(())
    }
}

/// Apply RoPE to `x[n × … × d_r]`, token row `t` at `positions[t]`.
pub fn rope_apply(x: &Tensor, params: &RopeParams, positions: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    let last = *shape.last().unwrap_or(&0);
    if last != params.dim {
        return Err(AttnError::dim("rope_apply last dim", shape, &[params.dim]));
    }
    let n = shape[0];
    if positions.len() != n {
        return Err(AttnError::dim("rope_apply positions", shape, &[positions.len()]));
    }
    let mut out = x.clone();
    if n == 0 {
        return Ok(out);
    }
    let row = x.len() / n;
    for (chunk, &p) in out.data_mut().chunks_mut(row).zip(positions) {
        params.rotate(chunk, p)?;
    }
    Ok(out)
}

/// `0..n` as a position list.
#[must_use]
pub fn positions(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn rotated(x: &[f64], pos: usize, params: &RopeParams) -> Result<Vec<f64>> {
    let mut v = x.to_vec();
    params.rotate(&mut v, pos)?;
    Ok(v)
}

/// `⟨rope(q, t_q), rope(k, t_k)⟩`.
pub fn rotated_inner(q: &[f64], k: &[f64], tq: usize, tk: usize, params: &RopeParams) -> Result<f64> {
    Ok(dot(&rotated(q, tq, params)?, &rotated(k, tk, params)?))
}

/// `|⟨rope(q, t_q+s), rope(k, t_k+s)⟩ − ⟨rope(q, t_q), rope(k, t_k)⟩|`.
/// Zero up to rounding for any pure rotary encoding.
pub fn equivariance_gap(
    q: &[f64],
    k: &[f64],
    (tq, tk): (usize, usize),
    s: usize,
    params: &RopeParams,
) -> Result<f64> {
    let shifted = rotated_inner(q, k, tq + s, tk + s, params)?;
    let base = rotated_inner(q, k, tq, tk, params)?;
    Ok((shifted - base).abs())
}

/// The same gap when linear maps act after the rotation on each side:
/// `⟨rope(q)·W_q, rope(k)·W_k⟩`. Unless `W_q·W_kᵀ` commutes with every
/// rotation the score depends on absolute position.
pub fn projected_gap(
    q: &[f64],
    k: &[f64],
    (tq, tk): (usize, usize),
    s: usize,
    wq: &Tensor,
    wk: &Tensor,
    params: &RopeParams,
) -> Result<f64> {
    let score = |a: usize, b: usize| -> Result<f64> {
        let rq = Tensor::new(vec![1, q.len()], rotated(q, a, params)?)?;
        let rk = Tensor::new(vec![1, k.len()], rotated(k, b, params)?)?;
        Ok(dot(rq.matmul(wq)?.data(), rk.matmul(wk)?.data()))
    };
    Ok((score(tq + s, tk + s)? - score(tq, tk)?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnkit_core::Rng;
    use proptest::prelude::*;

    #[test]
    fn position_zero_is_identity() {
        let p = RopeParams::new(8, DEFAULT_ROPE_BASE).unwrap();
        let x = Tensor::from_fn(&[1, 8], |i| i as f64 - 3.5);
        assert_eq!(rope_apply(&x, &p, &[0]).unwrap(), x);
    }

    #[test]
    fn unit_frequency_pair() {
        for base in [2.0, 10_000.0, 1e6] {
            let p = RopeParams::new(2, base).unwrap();
            let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
            let y = rope_apply(&x, &p, &[1]).unwrap();
            assert!((y.data()[0] - 1f64.cos()).abs() < 1e-15);
            assert!((y.data()[1] - 1f64.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(matches!(RopeParams::new(5, 10_000.0), Err(AttnError::Config(_))));
        assert!(RopeParams::new(0, 10_000.0).is_err());
        assert!(RopeParams::new(4, -1.0).is_err());
    }

    #[test]
    fn frequencies() {
        let p = RopeParams::new(8, 10_000.0).unwrap();
        assert_eq!(p.theta(0), 1.0);
        assert!((p.theta(2) - 10_000f64.powf(-0.5)).abs() < 1e-18);
    }

    #[test]
    fn multi_head_rows_rotate_each_head() {
        let p = RopeParams::new(4, 100.0).unwrap();
        let mut rng = Rng::new(3);
        let head = Tensor::gaussian(&[1, 4], 1.0, &mut rng);
        let two = Tensor::concat(&[&head, &head], 1).unwrap().reshape(&[1, 2, 4]).unwrap();
        let a = rope_apply(&head, &p, &[7]).unwrap();
        let b = rope_apply(&two, &p, &[7]).unwrap();
        assert_eq!(&b.data()[..4], a.data());
        assert_eq!(&b.data()[4..], a.data());
    }

    #[test]
    fn offset_matches_shifted_positions() {
        let p = RopeParams::new(6, 50.0).unwrap();
        let x = Tensor::gaussian(&[3, 6], 1.0, &mut Rng::new(5));
        let a = rope_apply(&x, &p.with_offset(4), &[0, 1, 2]).unwrap();
        let b = rope_apply(&x, &p, &[4, 5, 6]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let p = RopeParams::new(4, 10.0).unwrap();
        let x = Tensor::zeros(&[2, 6]);
        assert!(rope_apply(&x, &p, &[0, 1]).is_err());
        let x = Tensor::zeros(&[2, 4]);
        assert!(rope_apply(&x, &p, &[0]).is_err());
    }

    proptest! {
        #[test]
        fn preserves_pair_norms(seed in 0u64..1000, pos in 0usize..5000) {
            let p = RopeParams::new(16, DEFAULT_ROPE_BASE).unwrap();
            let x = Tensor::gaussian(&[1, 16], 1.0, &mut Rng::new(seed));
            let y = rope_apply(&x, &p, &[pos]).unwrap();
            for l in 0..8 {
                let a = x.data()[2 * l].hypot(x.data()[2 * l + 1]);
                let b = y.data()[2 * l].hypot(y.data()[2 * l + 1]);
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn translation_equivariance(seed in 0u64..1000, tq in 0usize..512, tk in 0usize..512, s in 0usize..4096) {
            let p = RopeParams::new(32, DEFAULT_ROPE_BASE).unwrap();
            let mut rng = Rng::new(seed);
            let q = Tensor::gaussian(&[32], 1.0, &mut rng);
            let k = Tensor::gaussian(&[32], 1.0, &mut rng);
            let gap = equivariance_gap(q.data(), k.data(), (tq, tk), s, &p).unwrap();
            prop_assert!(gap <= 1e-9, "gap {gap}");
        }

        #[test]
        fn second_moment_preserved(seed in 0u64..500) {
            let p = RopeParams::new(8, DEFAULT_ROPE_BASE).unwrap();
            let x = Tensor::gaussian(&[64, 8], 1.0, &mut Rng::new(seed));
            let y = rope_apply(&x, &p, &positions(64)).unwrap();
            let ms = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
            prop_assert!((ms(&x) - ms(&y)).abs() <= 1e-12 * ms(&x));
        }
    }

    #[test]
    fn projection_after_rotation_breaks_equivariance() {
        let p = RopeParams::new(8, DEFAULT_ROPE_BASE).unwrap();
        let mut rng = Rng::new(11);
        let wq = Tensor::gaussian(&[8, 8], 1.0, &mut rng);
        let wk = Tensor::gaussian(&[8, 8], 1.0, &mut rng);
        let q = Tensor::gaussian(&[8], 1.0, &mut rng);
        let k = Tensor::gaussian(&[8], 1.0, &mut rng);
        let gap = projected_gap(q.data(), k.data(), (5, 2), 3, &wq, &wk, &p).unwrap();
        assert!(gap > 1e-3, "gap {gap}");
        let id = Tensor::identity(8);
        let gap = projected_gap(q.data(), k.data(), (5, 2), 3, &id, &id, &p).unwrap();
        assert!(gap <= 1e-12);
    }
}
