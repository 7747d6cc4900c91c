//! Output gating applied before the attention output projection.

use attnkit_core::tensor::sigmoid;
use attnkit_core::{AttnError, Result, Tensor};

/// `O_flat ⊙ sigmoid(H·W^G)`. `h[n×d]`, `o_flat[n×h·d_h]`, `wg[d×h·d_h]`.
pub fn gated_output(h: &Tensor, o_flat: &Tensor, wg: &Tensor) -> Result<Tensor> {
    let gate = h.matmul(wg)?;
    if gate.shape() != o_flat.shape() {
        return Err(AttnError::dim("gated_output", o_flat.shape(), gate.shape()));
    }
    o_flat.zip_with(&gate, "gated_output", |o, g| o * sigmoid(g))
}
