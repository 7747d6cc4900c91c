//! Per-head keys and values rebuilt as sums of latent-block products.

use attnkit_core::weights::sub_block;
use attnkit_core::{AttnError, Result, Tensor};

/// `C · W[:, head·d_h..(head+1)·d_h]`, the undivided up-projection.
pub fn head_up(c: &Tensor, w: &Tensor, head: usize, d_h: usize) -> Result<Tensor> {
    let (rows, _) = w.dims2("head_up")?;
    c.matmul(&sub_block(w, 0..rows, head * d_h..(head + 1) * d_h)?)
}

/// `Σ_b C_(b) · W_(b),(head)` for K and V, splitting the latent width into
/// `n_blocks` equal column blocks of `c[n × w]` and row blocks of
/// `wuk`, `wuv` (`w × k·d_h`). Blocks are accumulated in ascending order.
pub fn block_reconstruct(
    c: &Tensor,
    wuk: &Tensor,
    wuv: &Tensor,
    n_blocks: usize,
    head: usize,
    d_h: usize,
) -> Result<(Tensor, Tensor)> {
    let (n, width) = c.dims2("block_reconstruct latent")?;
    if n_blocks == 0 || width % n_blocks != 0 {
        return Err(AttnError::config(format!(
            "latent width {width} does not split into {n_blocks} blocks"
        )));
    }
    for w in [wuk, wuv] {
        let (r, cols) = w.dims2("block_reconstruct weight")?;
        if r != width || cols < (head + 1) * d_h {
            return Err(AttnError::dim("block_reconstruct weight", w.shape(), &[width, (head + 1) * d_h]));
        }
    }
    let bw = width / n_blocks;
    let cols = head * d_h..(head + 1) * d_h;
    let mut k = Tensor::zeros(&[n, d_h]);
    let mut v = Tensor::zeros(&[n, d_h]);
    for b in 0..n_blocks {
        let cb = c.slice(1, b * bw..(b + 1) * bw)?;
        k = k.add(&cb.matmul(&sub_block(wuk, b * bw..(b + 1) * bw, cols.clone())?)?)?;
        v = v.add(&cb.matmul(&sub_block(wuv, b * bw..(b + 1) * bw, cols.clone())?)?)?;
    }
    Ok((k, v))
}
