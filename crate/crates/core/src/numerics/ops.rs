//! Differentiable tensor operations.
//!
//! Every function takes the tape first; an operation is recorded when any
//! input is tracked on that tape, otherwise it behaves as plain math. All
//! outputs pass through the `Tensor` constructor, which enforces finiteness.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::numerics::fmath;
use crate::numerics::tape::{kernels, Op, Tape};
use crate::numerics::tensor::Tensor;

/// Epsilon inside the layer-norm variance; small enough that normalized rows
/// have variance within 1e-6 of 1 for any realistic activation scale.
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Additive pre-softmax penalty that drives masked attention logits to an
/// exactly-zero weight while keeping every stored value finite.
pub const MASK_NEG: f64 = -1e30;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> CoreError {
    CoreError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Standard matrix product `a(m x k) @ b(k x n)`.
pub fn matmul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err("matmul", a, b));
    }
    let data = kernels::mm(a.data(), b.data(), m, k, n);
    let mut out = Tensor::matrix(m, n, data)?;
    let (arg_a, arg_b) = (tape.arg(a), tape.arg(b));
    tape.record(
        arg_a.is_some() || arg_b.is_some(),
        Op::Matmul {
            a: arg_a,
            b: arg_b,
            a_data: a.data().to_vec(),
            b_data: b.data().to_vec(),
            m,
            k,
            n,
        },
        &mut out,
    );
    Ok(out)
}

/// `a(m x d) @ b(n x d)^T`, i.e. all pairwise row dot products.
pub fn matmul_tb(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, d) = a.dims2()?;
    let (n, d2) = b.dims2()?;
    if d != d2 {
        return Err(shape_err("matmul_tb", a, b));
    }
    let data = kernels::mm_abt(a.data(), b.data(), m, d, n);
    let mut out = Tensor::matrix(m, n, data)?;
    let (arg_a, arg_b) = (tape.arg(a), tape.arg(b));
    tape.record(
        arg_a.is_some() || arg_b.is_some(),
        Op::MatmulTb {
            a: arg_a,
            b: arg_b,
            a_data: a.data().to_vec(),
            b_data: b.data().to_vec(),
            m,
            d,
            n,
        },
        &mut out,
    );
    Ok(out)
}

fn zip_elementwise(
    tape: &mut Tape,
    op_name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    make_op: impl Fn(Option<u32>, Option<u32>, &Tensor, &Tensor) -> Op,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(op_name, a, b));
    }
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    let mut out = Tensor::new(a.shape().to_vec(), data)?;
    let (arg_a, arg_b) = (tape.arg(a), tape.arg(b));
    tape.record(
        arg_a.is_some() || arg_b.is_some(),
        make_op(arg_a, arg_b, a, b),
        &mut out,
    );
    Ok(out)
}

/// Elementwise sum of same-shape tensors.
pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_elementwise(tape, "add", a, b, |x, y| x + y, |a, b, _, _| Op::Add { a, b })
}

/// Elementwise difference of same-shape tensors.
pub fn sub(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_elementwise(tape, "sub", a, b, |x, y| x - y, |a, b, _, _| Op::Sub { a, b })
}

/// Elementwise (Hadamard) product of same-shape tensors.
pub fn mul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_elementwise(
        tape,
        "mul",
        a,
        b,
        |x, y| x * y,
        |arg_a, arg_b, a, b| Op::Mul {
            a: arg_a,
            b: arg_b,
            a_data: a.data().to_vec(),
            b_data: b.data().to_vec(),
        },
    )
}

/// `mul_c * x + add_c` with scalar constants.
pub fn affine(tape: &mut Tape, x: &Tensor, mul_c: f64, add_c: f64) -> Result<Tensor> {
    let data: Vec<f64> = x.data().iter().map(|&v| mul_c * v + add_c).collect();
    let mut out = Tensor::new(x.shape().to_vec(), data)?;
    let arg = tape.arg(x);
    tape.record(arg.is_some(), Op::Affine { x: arg, mul: mul_c }, &mut out);
    Ok(out)
}

/// Row-broadcast addition of a `1 x n` bias.
pub fn add_bias(tape: &mut Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let (br, bc) = bias.dims2()?;
    if br != 1 || bc != cols {
        return Err(shape_err("add_bias", x, bias));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(x.at(r, c) + bias.data()[c]);
        }
    }
    let mut out = Tensor::matrix(rows, cols, data)?;
    let (arg_x, arg_b) = (tape.arg(x), tape.arg(bias));
    tape.record(
        arg_x.is_some() || arg_b.is_some(),
        Op::AddBias {
            x: arg_x,
            bias: arg_b,
            rows,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Row-broadcast multiplication by a `1 x n` gain (layer-norm affine scale).
pub fn mul_bias(tape: &mut Tape, x: &Tensor, gain: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let (gr, gc) = gain.dims2()?;
    if gr != 1 || gc != cols {
        return Err(shape_err("mul_bias", x, gain));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(x.at(r, c) * gain.data()[c]);
        }
    }
    let mut out = Tensor::matrix(rows, cols, data)?;
    let (arg_x, arg_g) = (tape.arg(x), tape.arg(gain));
    tape.record(
        arg_x.is_some() || arg_g.is_some(),
        Op::MulBias {
            x: arg_x,
            gain: arg_g,
            x_data: x.data().to_vec(),
            gain_data: gain.data().to_vec(),
            rows,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

fn unary(
    tape: &mut Tape,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    make_op: impl Fn(Option<u32>, &[f64], &[f64]) -> Op,
) -> Result<Tensor> {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let mut out = Tensor::new(x.shape().to_vec(), data)?;
    let arg = tape.arg(x);
    let op = make_op(arg, x.data(), out.data());
    tape.record(arg.is_some(), op, &mut out);
    Ok(out)
}

pub fn relu(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    unary(
        tape,
        x,
        |v| if v > 0.0 { v } else { 0.0 },
        |arg, x_data, _| Op::Relu {
            x: arg,
            x_data: x_data.to_vec(),
        },
    )
}

pub fn sigmoid(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    unary(
        tape,
        x,
        |v| {
            if v >= 0.0 {
                1.0 / (1.0 + fmath::exp(-v))
            } else {
                let e = fmath::exp(v);
                e / (1.0 + e)
            }
        },
        |arg, _, y_data| Op::Sigmoid {
            x: arg,
            y_data: y_data.to_vec(),
        },
    )
}

pub fn exp(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    unary(
        tape,
        x,
        fmath::exp,
        |arg, _, y_data| Op::Exp {
            x: arg,
            y_data: y_data.to_vec(),
        },
    )
}

/// Natural log; the domain error surfaces as a non-finite rejection.
pub fn ln(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    if x.data().iter().any(|&v| v <= 0.0) {
        return Err(CoreError::NonFinite { op: "ln" });
    }
    unary(
        tape,
        x,
        fmath::ln,
        |arg, x_data, _| Op::Ln {
            x: arg,
            x_data: x_data.to_vec(),
        },
    )
}

/// Clamp into `[lo, hi]`; gradient passes through strictly inside the band.
pub fn clamp(tape: &mut Tape, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    unary(
        tape,
        x,
        |v| v.max(lo).min(hi),
        |arg, x_data, _| Op::Clamp {
            x: arg,
            x_data: x_data.to_vec(),
            lo,
            hi,
        },
    )
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..cols {
            let e = fmath::exp(row[c] - max);
            data[r * cols + c] = e;
            sum += e;
        }
        for c in 0..cols {
            data[r * cols + c] /= sum;
        }
    }
    let mut out = Tensor::matrix(rows, cols, data)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::SoftmaxRows {
            x: arg,
            y_data: out.data().to_vec(),
            rows,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Row-wise normalization to zero mean and unit variance (no affine part).
pub fn layer_norm_rows(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let nf = cols as f64;
    let mut data = vec![0.0; rows * cols];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean: f64 = row.iter().sum::<f64>() / nf;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let is = 1.0 / fmath::sqrt(var + LAYER_NORM_EPS);
        inv_std[r] = is;
        for c in 0..cols {
            data[r * cols + c] = (row[c] - mean) * is;
        }
    }
    let mut out = Tensor::matrix(rows, cols, data)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::LayerNormRows {
            x: arg,
            x_hat: out.data().to_vec(),
            inv_std,
            rows,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Row-wise scaling to unit L2 norm. Zero rows are rejected.
pub fn l2_normalize_rows(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let mut data = vec![0.0; rows * cols];
    let mut norms = vec![0.0; rows];
    for r in 0..rows {
        let row = x.row(r);
        let norm = fmath::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return Err(CoreError::ZeroNorm {
                op: "l2_normalize_rows",
            });
        }
        norms[r] = norm;
        for c in 0..cols {
            data[r * cols + c] = row[c] / norm;
        }
    }
    let mut out = Tensor::matrix(rows, cols, data)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::L2NormalizeRows {
            x: arg,
            y_data: out.data().to_vec(),
            norms,
            rows,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Sum of all elements, producing a 1x1 tensor.
pub fn sum_all(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let total: f64 = x.data().iter().sum();
    let mut out = Tensor::scalar(total)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::SumAll {
            x: arg,
            numel: x.numel(),
        },
        &mut out,
    );
    Ok(out)
}

/// Mean of the first `n_prefix` rows (masked mean pooling; PAD rows form a
/// suffix by construction).
pub fn mean_rows_prefix(tape: &mut Tape, x: &Tensor, n_prefix: usize) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if n_prefix == 0 || n_prefix > rows {
        return Err(CoreError::Dimension {
            op: "mean_rows_prefix",
            detail: alloc::format!("prefix {n_prefix} outside 1..={rows}"),
        });
    }
    let mut data = vec![0.0; cols];
    for r in 0..n_prefix {
        for c in 0..cols {
            data[c] += x.at(r, c);
        }
    }
    let w = 1.0 / n_prefix as f64;
    for v in data.iter_mut() {
        *v *= w;
    }
    let mut out = Tensor::matrix(1, cols, data)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::MeanRowsPrefix {
            x: arg,
            n_prefix,
            rows,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Row gather from an embedding table.
pub fn embed_lookup(tape: &mut Tape, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (vocab, dim) = table.dims2()?;
    if ids.is_empty() {
        return Err(CoreError::Dimension {
            op: "embed_lookup",
            detail: "empty id list".into(),
        });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(CoreError::Contract(alloc::format!(
            "token id {bad} out of range for vocab of size {vocab}"
        )));
    }
    let mut data = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        data.extend_from_slice(table.row(id));
    }
    let mut out = Tensor::matrix(ids.len(), dim, data)?;
    let arg = tape.arg(table);
    tape.record(
        arg.is_some(),
        Op::EmbedLookup {
            table: arg,
            ids: ids.to_vec(),
            vocab,
            dim,
        },
        &mut out,
    );
    Ok(out)
}

/// Vertical stack of matrices sharing a column count.
pub fn concat_rows(tape: &mut Tape, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(CoreError::Dimension {
            op: "concat_rows",
            detail: "no parts".into(),
        });
    }
    let cols = parts[0].dims2()?.1;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut op_parts = Vec::with_capacity(parts.len());
    let mut tracked = false;
    for p in parts {
        let (pr, pc) = p.dims2()?;
        if pc != cols {
            return Err(shape_err("concat_rows", parts[0], p));
        }
        data.extend_from_slice(p.data());
        rows += pr;
        let arg = tape.arg(p);
        tracked |= arg.is_some();
        op_parts.push((arg, pr));
    }
    let mut out = Tensor::matrix(rows, cols, data)?;
    tape.record(
        tracked,
        Op::ConcatRows {
            parts: op_parts,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Horizontal concatenation of matrices sharing a row count.
pub fn concat_cols(tape: &mut Tape, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(CoreError::Dimension {
            op: "concat_cols",
            detail: "no parts".into(),
        });
    }
    let rows = parts[0].dims2()?.0;
    let mut op_parts = Vec::with_capacity(parts.len());
    let mut tracked = false;
    let mut total_cols = 0;
    for p in parts {
        let (pr, pc) = p.dims2()?;
        if pr != rows {
            return Err(shape_err("concat_cols", parts[0], p));
        }
        let arg = tape.arg(p);
        tracked |= arg.is_some();
        op_parts.push((arg, pc));
        total_cols += pc;
    }
    let mut data = Vec::with_capacity(rows * total_cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let mut out = Tensor::matrix(rows, total_cols, data)?;
    tape.record(
        tracked,
        Op::ConcatCols {
            parts: op_parts,
            rows,
        },
        &mut out,
    );
    Ok(out)
}

/// Contiguous row range `[start, end)`.
pub fn slice_rows(tape: &mut Tape, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if start >= end || end > rows {
        return Err(CoreError::Dimension {
            op: "slice_rows",
            detail: alloc::format!("range {start}..{end} outside 0..{rows}"),
        });
    }
    let data = x.data()[start * cols..end * cols].to_vec();
    let mut out = Tensor::matrix(end - start, cols, data)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::SliceRows {
            x: arg,
            start,
            in_rows: rows,
            out_rows: end - start,
            cols,
        },
        &mut out,
    );
    Ok(out)
}

/// Contiguous column range `[start, end)`.
pub fn slice_cols(tape: &mut Tape, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if start >= end || end > cols {
        return Err(CoreError::Dimension {
            op: "slice_cols",
            detail: alloc::format!("range {start}..{end} outside 0..{cols}"),
        });
    }
    let out_cols = end - start;
    let mut data = Vec::with_capacity(rows * out_cols);
    for r in 0..rows {
        data.extend_from_slice(&x.row(r)[start..end]);
    }
    let mut out = Tensor::matrix(rows, out_cols, data)?;
    let arg = tape.arg(x);
    tape.record(
        arg.is_some(),
        Op::SliceCols {
            x: arg,
            start,
            in_cols: cols,
            out_cols,
            rows,
        },
        &mut out,
    );
    Ok(out)
}

/// Scaled dot-product attention.
///
/// `weights = softmax_rows(q k^T * scale + mask)`, `out = weights v`. The
/// optional mask is a constant `a x b` tensor added to the logits (use
/// [`MASK_NEG`] entries to zero out keys). Returns `(out, weights)`.
pub fn attention(
    tape: &mut Tape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    scale: f64,
    mask: Option<&Tensor>,
) -> Result<(Tensor, Tensor)> {
    let (b, dk) = k.dims2()?;
    let (bv, _) = v.dims2()?;
    if b == 0 || bv == 0 {
        return Err(CoreError::EmptyKeys);
    }
    if bv != b {
        return Err(shape_err("attention", k, v));
    }
    let (_, dq) = q.dims2()?;
    if dq != dk {
        return Err(shape_err("attention", q, k));
    }
    if !(scale > 0.0) {
        return Err(CoreError::Contract(alloc::format!(
            "attention scale must be positive, got {scale}"
        )));
    }
    let logits = matmul_tb(tape, q, k)?;
    let scaled = affine(tape, &logits, scale, 0.0)?;
    let masked = match mask {
        Some(m) => add(tape, &scaled, m)?,
        None => scaled,
    };
    let weights = softmax_rows(tape, &masked)?;
    let out = matmul(tape, &weights, v)?;
    Ok((out, weights))
}

/// Default attention scale `1 / sqrt(d)`.
pub fn attention_scale(d: usize) -> f64 {
    1.0 / fmath::sqrt(d as f64)
}
