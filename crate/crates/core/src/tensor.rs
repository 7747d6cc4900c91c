//! Dense row-major `f64` tensors.
//!
//! Only what the attention kit needs: shape bookkeeping, 2-D matmul, row
//! softmax, RMSNorm, reshape/concat/slice/repeat along an axis, and the head
//! contraction used by weight absorption.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AttnError, Result};
use crate::rng::Rng;

pub const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(AttnError::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    #[must_use]
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    #[must_use]
    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    #[must_use]
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(f).collect(),
        }
    }

    /// i.i.d. N(0, sigma^2) draws. `sigma == 0` gives exact zeros.
    pub fn gaussian(shape: &[usize], sigma: f64, rng: &mut Rng) -> Self {
        let n = numel(shape);
        if sigma == 0.0 {
            return Tensor::zeros(shape);
        }
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    #[must_use]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[must_use]
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[must_use]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// (rows, cols) of a 2-D tensor.
    pub fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(AttnError::dim(format!("{op} (expects rank 2)"), &self.shape, &[])),
        }
    }

    /// Row `i` of a 2-D tensor, or the `i`-th slab along axis 0 in general.
    #[must_use]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = numel(&self.shape[1..]);
        &self.data[i * w..(i + 1) * w]
    }

    #[must_use]
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// c[i,j] = sum_l a[i,l] * b[l,j], accumulated in ascending l.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, p) = other.dims2("matmul")?;
        if k != k2 {
            return Err(AttnError::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let crow = &mut out[i * p..(i + 1) * p];
            for l in 0..k {
                let a = self.data[i * k + l];
                let brow = &other.data[l * p..(l + 1) * p];
                for (c, b) in crow.iter_mut().zip(brow) {
                    *c += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    /// self · otherᵀ for 2-D operands sharing their column count.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_t")?;
        let (p, k2) = other.dims2("matmul_t")?;
        if k != k2 {
            return Err(AttnError::dim("matmul_t", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..p {
                out[i * p + j] = dot(a, &other.data[j * k..(j + 1) * k]);
            }
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Batched vector-matrix product over a leading head axis:
    /// `self[h×p]`, `w[h×p×c]` → `[h×c]` (einsum "hp,hpc->hc").
    pub fn head_contract(&self, w: &Tensor) -> Result<Tensor> {
        let (h, p) = self.dims2("head_contract")?;
        let (wh, wp, c) = match w.shape.as_slice() {
            [a, b, c] => (*a, *b, *c),
            _ => return Err(AttnError::dim("head_contract", &self.shape, &w.shape)),
        };
        if wh != h || wp != p {
            return Err(AttnError::dim("head_contract", &self.shape, &w.shape));
        }
        let mut out = vec![0.0; h * c];
        for i in 0..h {
            let orow = &mut out[i * c..(i + 1) * c];
            for l in 0..p {
                let a = self.data[i * p + l];
                let wrow = &w.data[(i * p + l) * c..(i * p + l + 1) * c];
                for (o, b) in orow.iter_mut().zip(wrow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![h, c],
            data: out,
        })
    }

    // ── Row-wise maps ───────────────────────────────────────────────

    /// Softmax over the last axis with per-row max subtraction.
    /// `-inf` entries are allowed (masked); NaN or an all-masked row is not.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let c = *self.shape.last().unwrap_or(&0);
        if c == 0 {
            return Ok(self.clone());
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            softmax_in_place(row)?;
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// x / sqrt(mean(x²) + eps) over the last axis. No learnable gain.
    #[must_use]
    pub fn rmsnorm(&self, eps: f64) -> Tensor {
        let c = *self.shape.last().unwrap_or(&1);
        let mut out = self.data.clone();
        if c > 0 {
            for row in out.chunks_mut(c) {
                rmsnorm_in_place(row, eps);
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
    }

    #[must_use]
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(AttnError::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    #[must_use]
    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    // ── Shape manipulation ──────────────────────────────────────────

    /// Same data, new shape metadata.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.data.len() {
            return Err(AttnError::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn split_at_axis(&self, axis: usize, op: &str) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(AttnError::dim(format!("{op} (axis {axis})"), &self.shape, &[]));
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        Ok((outer, self.shape[axis], inner))
    }

    /// Elements `range` along `axis`.
    pub fn slice(&self, axis: usize, range: Range<usize>) -> Result<Tensor> {
        let (outer, n, inner) = self.split_at_axis(axis, "slice")?;
        if range.start > range.end || range.end > n {
            return Err(AttnError::dim(
                format!("slice {}..{} on axis {axis}", range.start, range.end),
                &self.shape,
                &[],
            ));
        }
        let w = range.end - range.start;
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&self.data[base + range.start * inner..base + range.end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = w;
        Ok(Tensor { shape, data })
    }

    /// Concatenate along `axis`; every other dimension must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| AttnError::config("concat of zero tensors"))?;
        let (outer, _, inner) = first.split_at_axis(axis, "concat")?;
        for p in parts {
            let same_rank = p.shape.len() == first.shape.len();
            let same_other = same_rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_other {
                return Err(AttnError::dim("concat", &first.shape, &p.shape));
            }
        }
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let w = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }

    /// Repeat each element `r` times along `axis` (torch `repeat_interleave`).
    pub fn repeat_interleave(&self, axis: usize, r: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.split_at_axis(axis, "repeat_interleave")?;
        let mut data = Vec::with_capacity(self.data.len() * r);
        for o in 0..outer {
            for i in 0..n {
                let src = &self.data[(o * n + i) * inner..(o * n + i + 1) * inner];
                for _ in 0..r {
                    data.extend_from_slice(src);
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = n * r;
        Ok(Tensor { shape, data })
    }

    // ── Comparison ──────────────────────────────────────────────────

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(AttnError::dim("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    #[must_use]
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// max |a - b| / max |reference|; falls back to absolute error when the
    /// reference is identically zero.
    pub fn max_rel_diff(&self, reference: &Tensor) -> Result<f64> {
        let abs = self.max_abs_diff(reference)?;
        let scale = reference.max_abs();
        Ok(if scale > 0.0 { abs / scale } else { abs })
    }
}

// ── Slice kernels shared with hot loops elsewhere ───────────────────

#[must_use]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    let mut m = f64::NEG_INFINITY;
    for &x in row.iter() {
        if x.is_nan() {
            return Err(AttnError::Numeric {
                op: "softmax".into(),
                detail: "NaN logit".into(),
            });
        }
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY || m.is_infinite() {
        return Err(AttnError::Numeric {
            op: "softmax".into(),
            detail: format!("row maximum is {m}"),
        });
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

pub fn rmsnorm_in_place(row: &mut [f64], eps: f64) {
    let ms = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    for x in row.iter_mut() {
        *x *= inv;
    }
}

#[must_use]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[must_use]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}
