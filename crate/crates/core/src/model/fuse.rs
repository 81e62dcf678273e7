//! Neighbor fusion: NCA over pooled vectors, TCA over token matrices.

use alloc::format;

use crate::error::Result;
use crate::numerics::ops;
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;

fn layer_norm_affine(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    x: &Tensor,
) -> Result<Tensor> {
    let normed = ops::layer_norm_rows(tape, x)?;
    let scaled = ops::mul_bias(tape, &normed, params.get(&format!("{prefix}.ln.gain"))?)?;
    ops::add_bias(tape, &scaled, params.get(&format!("{prefix}.ln.bias"))?)
}

/// Neighbor-level co-attention.
///
/// The projected target vector attends over the projected neighbor pooled
/// vectors; the attended value is residually added to the target and layer
/// normalized. With no neighbors the target passes through unchanged.
pub fn nca_fuse(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    target_pooled: &Tensor,
    neighbors_pooled: Option<&Tensor>,
) -> Result<Tensor> {
    let Some(neighbors) = neighbors_pooled else {
        return Ok(target_pooled.clone());
    };
    let d = target_pooled.cols();
    let q = ops::matmul(tape, target_pooled, params.get(&format!("{prefix}.wq"))?)?;
    let k = ops::matmul(tape, neighbors, params.get(&format!("{prefix}.wk"))?)?;
    let v = ops::matmul(tape, neighbors, params.get(&format!("{prefix}.wv"))?)?;
    let (attended, _) = ops::attention(tape, &q, &k, &v, ops::attention_scale(d), None)?;
    let fused = ops::add(tape, target_pooled, &attended)?;
    layer_norm_affine(tape, params, prefix, &fused)
}

/// Token-level co-attention.
///
/// Every target token cross-attends over the concatenated neighbor tokens;
/// the attended tokens are residually added and layer normalized, then the
/// non-PAD prefix is mean-pooled. With no neighbor tokens this reduces to the
/// masked mean of the target tokens.
pub fn tca_fuse(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    target_tokens: &Tensor,
    target_attn_len: usize,
    neighbor_tokens: Option<&Tensor>,
) -> Result<Tensor> {
    let Some(neighbors) = neighbor_tokens else {
        return ops::mean_rows_prefix(tape, target_tokens, target_attn_len);
    };
    let d = target_tokens.cols();
    let q = ops::matmul(tape, target_tokens, params.get(&format!("{prefix}.wq"))?)?;
    let k = ops::matmul(tape, neighbors, params.get(&format!("{prefix}.wk"))?)?;
    let v = ops::matmul(tape, neighbors, params.get(&format!("{prefix}.wv"))?)?;
    let (attended, _) = ops::attention(tape, &q, &k, &v, ops::attention_scale(d), None)?;
    let fused = ops::add(tape, target_tokens, &attended)?;
    let normed = layer_norm_affine(tape, params, prefix, &fused)?;
    ops::mean_rows_prefix(tape, &normed, target_attn_len)
}
