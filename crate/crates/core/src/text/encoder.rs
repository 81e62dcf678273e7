//! Micro-transformer encoder: embedding lookup plus learned positions, then
//! `layers` blocks of masked multi-head self-attention and a feed-forward,
//! each with residual connection and layer normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::numerics::ops::{self, MASK_NEG};
use crate::numerics::params::{ParamInit, ParamSet, ParamSpec};
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;
use crate::text::vocab::{TokenSequence, PAD_ID};

/// How the token representations collapse into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Pooling {
    /// Mean over non-PAD token rows (default).
    Mean,
    /// The CLS row.
    Cls,
}

/// Architecture of one encoder stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ff_dim: usize,
    pub pooling: Pooling,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, ok: bool, reason: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CoreError::Config {
                    field: field.into(),
                    reason,
                })
            }
        };
        check(
            "vocab_size",
            self.vocab_size >= 3,
            format!("must cover the reserved ids, got {}", self.vocab_size),
        )?;
        check(
            "hidden_dim",
            self.hidden_dim > 0,
            "must be positive".into(),
        )?;
        check("layers", self.layers > 0, "must be positive".into())?;
        check("heads", self.heads > 0, "must be positive".into())?;
        check(
            "heads",
            self.hidden_dim % self.heads == 0,
            format!(
                "hidden_dim {} must be divisible by heads {}",
                self.hidden_dim, self.heads
            ),
        )?;
        check(
            "max_len",
            self.max_len >= 2,
            format!("must be >= 2, got {}", self.max_len),
        )?;
        check("ff_dim", self.ff_dim > 0, "must be positive".into())?;
        Ok(())
    }
}

/// Token-level and pooled representations of one sequence.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `len x d`, one row per input position (PAD rows included).
    pub token_reps: Tensor,
    /// `1 x d` summary per the configured pooling.
    pub pooled: Tensor,
    /// Non-PAD prefix length.
    pub attn_len: usize,
}

/// Parameter tensors of one encoder stack under `prefix`.
pub fn param_specs(prefix: &str, cfg: &EncoderConfig) -> Vec<ParamSpec> {
    let d = cfg.hidden_dim;
    let f = cfg.ff_dim;
    let mut specs = Vec::new();
    let mut push = |name: String, rows, cols, init| {
        specs.push(ParamSpec::new(name, rows, cols, init));
    };
    push(format!("{prefix}.tok_emb"), cfg.vocab_size, d, ParamInit::Uniform);
    push(format!("{prefix}.pos_emb"), cfg.max_len, d, ParamInit::Uniform);
    for l in 0..cfg.layers {
        let b = format!("{prefix}.block{l}");
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{b}.attn.{w}"), d, d, ParamInit::Uniform);
        }
        push(format!("{b}.ln1.gain"), 1, d, ParamInit::Ones);
        push(format!("{b}.ln1.bias"), 1, d, ParamInit::Zeros);
        push(format!("{b}.ff.w1"), d, f, ParamInit::Uniform);
        push(format!("{b}.ff.b1"), 1, f, ParamInit::Zeros);
        push(format!("{b}.ff.w2"), f, d, ParamInit::Uniform);
        push(format!("{b}.ff.b2"), 1, d, ParamInit::Zeros);
        push(format!("{b}.ln2.gain"), 1, d, ParamInit::Ones);
        push(format!("{b}.ln2.bias"), 1, d, ParamInit::Zeros);
    }
    specs
}

/// Scalar parameter count of one encoder stack; matches `param_specs`.
pub fn encoder_param_count(cfg: &EncoderConfig) -> usize {
    let d = cfg.hidden_dim;
    let f = cfg.ff_dim;
    let per_block = 4 * d * d + 2 * d + (d * f + f + f * d + d) + 2 * d;
    (cfg.vocab_size + cfg.max_len) * d + cfg.layers * per_block
}

/// Layer normalization with learned gain and bias.
fn layer_norm_affine(
    tape: &mut Tape,
    params: &ParamSet,
    name: &str,
    x: &Tensor,
) -> Result<Tensor> {
    let normed = ops::layer_norm_rows(tape, x)?;
    let scaled = ops::mul_bias(tape, &normed, params.get(&format!("{name}.gain"))?)?;
    ops::add_bias(tape, &scaled, params.get(&format!("{name}.bias"))?)
}

/// Constant additive mask that removes PAD keys: `len x len` with
/// [`MASK_NEG`] in every column at or past `attn_len`.
fn pad_mask(len: usize, attn_len: usize) -> Option<Tensor> {
    if attn_len >= len {
        return None;
    }
    let mut data = alloc::vec![0.0; len * len];
    for r in 0..len {
        for c in attn_len..len {
            data[r * len + c] = MASK_NEG;
        }
    }
    Some(Tensor::matrix(len, len, data).expect("mask construction"))
}

fn encoder_block(
    tape: &mut Tape,
    params: &ParamSet,
    block: &str,
    cfg: &EncoderConfig,
    x: &Tensor,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let d = cfg.hidden_dim;
    let dh = d / cfg.heads;
    let q = ops::matmul(tape, x, params.get(&format!("{block}.attn.wq"))?)?;
    let k = ops::matmul(tape, x, params.get(&format!("{block}.attn.wk"))?)?;
    let v = ops::matmul(tape, x, params.get(&format!("{block}.attn.wv"))?)?;

    let mut head_outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = ops::slice_cols(tape, &q, lo, hi)?;
        let kh = ops::slice_cols(tape, &k, lo, hi)?;
        let vh = ops::slice_cols(tape, &v, lo, hi)?;
        let (out, _) = ops::attention(tape, &qh, &kh, &vh, ops::attention_scale(dh), mask)?;
        head_outs.push(out);
    }
    let head_refs: Vec<&Tensor> = head_outs.iter().collect();
    let merged = ops::concat_cols(tape, &head_refs)?;
    let attn_out = ops::matmul(tape, &merged, params.get(&format!("{block}.attn.wo"))?)?;

    let res1 = ops::add(tape, x, &attn_out)?;
    let normed1 = layer_norm_affine(tape, params, &format!("{block}.ln1"), &res1)?;

    let h1 = ops::matmul(tape, &normed1, params.get(&format!("{block}.ff.w1"))?)?;
    let h1 = ops::add_bias(tape, &h1, params.get(&format!("{block}.ff.b1"))?)?;
    let h1 = ops::relu(tape, &h1)?;
    let h2 = ops::matmul(tape, &h1, params.get(&format!("{block}.ff.w2"))?)?;
    let h2 = ops::add_bias(tape, &h2, params.get(&format!("{block}.ff.b2"))?)?;

    let res2 = ops::add(tape, &normed1, &h2)?;
    layer_norm_affine(tape, params, &format!("{block}.ln2"), &res2)
}

/// Encode a token sequence into per-token and pooled representations.
///
/// PAD keys receive exactly zero attention weight, and mean pooling averages
/// only the non-PAD prefix, so padded and unpadded encodings of the same text
/// agree bit-for-bit on the real positions.
pub fn encode(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    cfg: &EncoderConfig,
    seq: &TokenSequence,
) -> Result<EncoderOutput> {
    if seq.len() > cfg.max_len {
        return Err(CoreError::Contract(format!(
            "sequence length {} exceeds max_len {}",
            seq.len(),
            cfg.max_len
        )));
    }
    debug_assert!(seq.ids().iter().all(|&id| id == PAD_ID || id < cfg.vocab_size));

    let len = seq.len();
    let tok = ops::embed_lookup(tape, params.get(&format!("{prefix}.tok_emb"))?, seq.ids())?;
    let pos_table = params.get(&format!("{prefix}.pos_emb"))?;
    let pos = ops::slice_rows(tape, pos_table, 0, len)?;
    let mut x = ops::add(tape, &tok, &pos)?;

    let mask = pad_mask(len, seq.attn_len());
    for l in 0..cfg.layers {
        x = encoder_block(
            tape,
            params,
            &format!("{prefix}.block{l}"),
            cfg,
            &x,
            mask.as_ref(),
        )?;
    }

    let pooled = match cfg.pooling {
        Pooling::Mean => ops::mean_rows_prefix(tape, &x, seq.attn_len())?,
        Pooling::Cls => ops::slice_rows(tape, &x, 0, 1)?,
    };
    Ok(EncoderOutput {
        token_reps: x,
        pooled,
        attn_len: seq.attn_len(),
    })
}
