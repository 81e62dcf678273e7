//! Reverse-mode differentiation tape.
//!
//! Operations on tracked tensors append a node holding whatever the backward
//! rule needs (saved inputs or outputs). [`Tape::backward`] replays the nodes
//! in reverse, accumulating vector-Jacobian products. A tape is replayable:
//! calling `backward` twice yields bit-identical gradients, because each call
//! starts from fresh accumulators.
//!
//! Node handles carry the owning tape's id, so a tensor produced on one tape
//! is treated as a constant by every other tape.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CoreError, Result};
use crate::numerics::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a recorded node; only valid on the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) idx: u32,
}

/// Tracked input of a recorded operation: `None` means the input was a
/// constant and receives no gradient.
type Arg = Option<u32>;

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    /// out = a(m x k) @ b(k x n)
    Matmul {
        a: Arg,
        b: Arg,
        a_data: Vec<f64>,
        b_data: Vec<f64>,
        m: usize,
        k: usize,
        n: usize,
    },
    /// out = a(m x d) @ b(n x d)^T
    MatmulTb {
        a: Arg,
        b: Arg,
        a_data: Vec<f64>,
        b_data: Vec<f64>,
        m: usize,
        d: usize,
        n: usize,
    },
    Add {
        a: Arg,
        b: Arg,
    },
    Sub {
        a: Arg,
        b: Arg,
    },
    Mul {
        a: Arg,
        b: Arg,
        a_data: Vec<f64>,
        b_data: Vec<f64>,
    },
    /// out = mul * x + add (elementwise constants)
    Affine {
        x: Arg,
        mul: f64,
    },
    /// out[r, c] = x[r, c] + bias[c]
    AddBias {
        x: Arg,
        bias: Arg,
        rows: usize,
        cols: usize,
    },
    /// out[r, c] = x[r, c] * gain[c]
    MulBias {
        x: Arg,
        gain: Arg,
        x_data: Vec<f64>,
        gain_data: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    Relu {
        x: Arg,
        x_data: Vec<f64>,
    },
    Sigmoid {
        x: Arg,
        y_data: Vec<f64>,
    },
    Exp {
        x: Arg,
        y_data: Vec<f64>,
    },
    Ln {
        x: Arg,
        x_data: Vec<f64>,
    },
    Clamp {
        x: Arg,
        x_data: Vec<f64>,
        lo: f64,
        hi: f64,
    },
    SoftmaxRows {
        x: Arg,
        y_data: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    LayerNormRows {
        x: Arg,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    L2NormalizeRows {
        x: Arg,
        y_data: Vec<f64>,
        norms: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    SumAll {
        x: Arg,
        numel: usize,
    },
    /// out = mean of the first `n_prefix` rows of x
    MeanRowsPrefix {
        x: Arg,
        n_prefix: usize,
        rows: usize,
        cols: usize,
    },
    EmbedLookup {
        table: Arg,
        ids: Vec<usize>,
        vocab: usize,
        dim: usize,
    },
    ConcatRows {
        parts: Vec<(Arg, usize)>,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<(Arg, usize)>,
        rows: usize,
    },
    SliceRows {
        x: Arg,
        start: usize,
        in_rows: usize,
        out_rows: usize,
        cols: usize,
    },
    SliceCols {
        x: Arg,
        start: usize,
        in_cols: usize,
        out_cols: usize,
        rows: usize,
    },
}

struct Node {
    op: Op,
    out_numel: usize,
}

/// Records operations applied to tracked tensors.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Track a tensor as a gradient leaf, assigning it a fresh node.
    pub fn watch(&mut self, t: &mut Tensor) {
        let node = self.push(Op::Leaf, t.numel());
        t.set_node(Some(node));
    }

    /// The tracked node index of `t` on this tape, if any.
    pub(crate) fn arg(&self, t: &Tensor) -> Arg {
        match t.node() {
            Some(n) if n.tape == self.id => Some(n.idx),
            _ => None,
        }
    }

    pub(crate) fn push(&mut self, op: Op, out_numel: usize) -> NodeRef {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { op, out_numel });
        NodeRef {
            tape: self.id,
            idx,
        }
    }

    /// Record `op` as the producer of `out` when any input was tracked.
    pub(crate) fn record(&mut self, tracked: bool, op: Op, out: &mut Tensor) {
        if tracked {
            let node = self.push(op, out.numel());
            out.set_node(Some(node));
        }
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; leaves
    /// that never received gradient flow report `None`.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(CoreError::Contract(alloc::format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let root = match loss.node() {
            Some(n) if n.tape == self.id => n.idx as usize,
            // An untracked loss has no gradient path to any leaf.
            _ => {
                return Ok(Gradients {
                    tape: self.id,
                    by_node: acc,
                })
            }
        };
        debug_assert_eq!(self.nodes[root].out_numel, 1);
        acc[root] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            let Some(dout) = acc[idx].take() else {
                continue;
            };
            self.backward_node(idx, &dout, &mut acc);
            // Leaves keep their accumulated gradient; interior gradients are
            // dropped once consumed to bound memory.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                acc[idx] = Some(dout);
            }
        }

        Ok(Gradients {
            tape: self.id,
            by_node: acc,
        })
    }

    fn backward_node(&self, idx: usize, dout: &[f64], acc: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul {
                a,
                b,
                a_data,
                b_data,
                m,
                k,
                n,
            } => {
                if a.is_some() {
                    // da = dout @ b^T
                    let da = kernels::mm_abt(dout, b_data, *m, *n, *k);
                    accumulate(acc, *a, &da);
                }
                if b.is_some() {
                    // db = a^T @ dout
                    let db = kernels::mm_atb(a_data, dout, *m, *k, *n);
                    accumulate(acc, *b, &db);
                }
            }
            Op::MatmulTb {
                a,
                b,
                a_data,
                b_data,
                m,
                d,
                n,
            } => {
                if a.is_some() {
                    // da = dout @ b
                    let da = kernels::mm(dout, b_data, *m, *n, *d);
                    accumulate(acc, *a, &da);
                }
                if b.is_some() {
                    // db = dout^T @ a
                    let db = kernels::mm_atb(dout, a_data, *m, *n, *d);
                    accumulate(acc, *b, &db);
                }
            }
            Op::Add { a, b } => {
                accumulate(acc, *a, dout);
                accumulate(acc, *b, dout);
            }
            Op::Sub { a, b } => {
                accumulate(acc, *a, dout);
                if b.is_some() {
                    let neg: Vec<f64> = dout.iter().map(|v| -v).collect();
                    accumulate(acc, *b, &neg);
                }
            }
            Op::Mul {
                a,
                b,
                a_data,
                b_data,
            } => {
                if a.is_some() {
                    let da: Vec<f64> = dout.iter().zip(b_data).map(|(d, b)| d * b).collect();
                    accumulate(acc, *a, &da);
                }
                if b.is_some() {
                    let db: Vec<f64> = dout.iter().zip(a_data).map(|(d, a)| d * a).collect();
                    accumulate(acc, *b, &db);
                }
            }
            Op::Affine { x, mul } => {
                if x.is_some() {
                    let dx: Vec<f64> = dout.iter().map(|d| d * mul).collect();
                    accumulate(acc, *x, &dx);
                }
            }
            Op::AddBias { x, bias, rows, cols } => {
                accumulate(acc, *x, dout);
                if bias.is_some() {
                    let mut db = vec![0.0; *cols];
                    for r in 0..*rows {
                        for c in 0..*cols {
                            db[c] += dout[r * cols + c];
                        }
                    }
                    accumulate(acc, *bias, &db);
                }
            }
            Op::MulBias {
                x,
                gain,
                x_data,
                gain_data,
                rows,
                cols,
            } => {
                if x.is_some() {
                    let mut dx = vec![0.0; x_data.len()];
                    for r in 0..*rows {
                        for c in 0..*cols {
                            dx[r * cols + c] = dout[r * cols + c] * gain_data[c];
                        }
                    }
                    accumulate(acc, *x, &dx);
                }
                if gain.is_some() {
                    let mut dg = vec![0.0; *cols];
                    for r in 0..*rows {
                        for c in 0..*cols {
                            dg[c] += dout[r * cols + c] * x_data[r * cols + c];
                        }
                    }
                    accumulate(acc, *gain, &dg);
                }
            }
            Op::Relu { x, x_data } => {
                if x.is_some() {
                    let dx: Vec<f64> = dout
                        .iter()
                        .zip(x_data)
                        .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(acc, *x, &dx);
                }
            }
            Op::Sigmoid { x, y_data } => {
                if x.is_some() {
                    let dx: Vec<f64> = dout
                        .iter()
                        .zip(y_data)
                        .map(|(d, y)| d * y * (1.0 - y))
                        .collect();
                    accumulate(acc, *x, &dx);
                }
            }
            Op::Exp { x, y_data } => {
                if x.is_some() {
                    let dx: Vec<f64> = dout.iter().zip(y_data).map(|(d, y)| d * y).collect();
                    accumulate(acc, *x, &dx);
                }
            }
            Op::Ln { x, x_data } => {
                if x.is_some() {
                    let dx: Vec<f64> = dout.iter().zip(x_data).map(|(d, x)| d / x).collect();
                    accumulate(acc, *x, &dx);
                }
            }
            Op::Clamp { x, x_data, lo, hi } => {
                if x.is_some() {
                    let dx: Vec<f64> = dout
                        .iter()
                        .zip(x_data)
                        .map(|(d, &x)| if x > *lo && x < *hi { *d } else { 0.0 })
                        .collect();
                    accumulate(acc, *x, &dx);
                }
            }
            Op::SoftmaxRows {
                x,
                y_data,
                rows,
                cols,
            } => {
                if x.is_some() {
                    let mut dx = vec![0.0; y_data.len()];
                    for r in 0..*rows {
                        let base = r * cols;
                        let y = &y_data[base..base + cols];
                        let d = &dout[base..base + cols];
                        let dot: f64 = d.iter().zip(y).map(|(d, y)| d * y).sum();
                        for c in 0..*cols {
                            dx[base + c] = y[c] * (d[c] - dot);
                        }
                    }
                    accumulate(acc, *x, &dx);
                }
            }
            Op::LayerNormRows {
                x,
                x_hat,
                inv_std,
                rows,
                cols,
            } => {
                if x.is_some() {
                    let nf = *cols as f64;
                    let mut dx = vec![0.0; x_hat.len()];
                    for r in 0..*rows {
                        let base = r * cols;
                        let xh = &x_hat[base..base + cols];
                        let d = &dout[base..base + cols];
                        let mean_d: f64 = d.iter().sum::<f64>() / nf;
                        let mean_dx: f64 = d.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / nf;
                        for c in 0..*cols {
                            dx[base + c] = inv_std[r] * (d[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    accumulate(acc, *x, &dx);
                }
            }
            Op::L2NormalizeRows {
                x,
                y_data,
                norms,
                rows,
                cols,
            } => {
                if x.is_some() {
                    let mut dx = vec![0.0; y_data.len()];
                    for r in 0..*rows {
                        let base = r * cols;
                        let y = &y_data[base..base + cols];
                        let d = &dout[base..base + cols];
                        let dot: f64 = d.iter().zip(y).map(|(d, y)| d * y).sum();
                        for c in 0..*cols {
                            dx[base + c] = (d[c] - y[c] * dot) / norms[r];
                        }
                    }
                    accumulate(acc, *x, &dx);
                }
            }
            Op::SumAll { x, numel } => {
                if x.is_some() {
                    let dx = vec![dout[0]; *numel];
                    accumulate(acc, *x, &dx);
                }
            }
            Op::MeanRowsPrefix {
                x,
                n_prefix,
                rows,
                cols,
            } => {
                if x.is_some() {
                    let w = 1.0 / *n_prefix as f64;
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..*n_prefix {
                        for c in 0..*cols {
                            dx[r * cols + c] = dout[c] * w;
                        }
                    }
                    accumulate(acc, *x, &dx);
                }
            }
            Op::EmbedLookup {
                table,
                ids,
                vocab,
                dim,
            } => {
                if table.is_some() {
                    let mut dt = vec![0.0; vocab * dim];
                    for (pos, &id) in ids.iter().enumerate() {
                        for c in 0..*dim {
                            dt[id * dim + c] += dout[pos * dim + c];
                        }
                    }
                    accumulate(acc, *table, &dt);
                }
            }
            Op::ConcatRows { parts, cols } => {
                let mut offset = 0;
                for (arg, rows) in parts {
                    let len = rows * cols;
                    if arg.is_some() {
                        accumulate(acc, *arg, &dout[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total_cols: usize = parts.iter().map(|(_, c)| c).sum();
                let mut col_offset = 0;
                for (arg, cols) in parts {
                    if arg.is_some() {
                        let mut dp = vec![0.0; rows * cols];
                        for r in 0..*rows {
                            for c in 0..*cols {
                                dp[r * cols + c] = dout[r * total_cols + col_offset + c];
                            }
                        }
                        accumulate(acc, *arg, &dp);
                    }
                    col_offset += cols;
                }
            }
            Op::SliceRows {
                x,
                start,
                in_rows,
                out_rows,
                cols,
            } => {
                if x.is_some() {
                    let mut dx = vec![0.0; in_rows * cols];
                    dx[start * cols..(start + out_rows) * cols].copy_from_slice(dout);
                    accumulate(acc, *x, &dx);
                }
            }
            Op::SliceCols {
                x,
                start,
                in_cols,
                out_cols,
                rows,
            } => {
                if x.is_some() {
                    let mut dx = vec![0.0; rows * in_cols];
                    for r in 0..*rows {
                        for c in 0..*out_cols {
                            dx[r * in_cols + start + c] = dout[r * out_cols + c];
                        }
                    }
                    accumulate(acc, *x, &dx);
                }
            }
        }
    }
}

fn accumulate(acc: &mut [Option<Vec<f64>>], arg: Arg, grad: &[f64]) {
    let Some(idx) = arg else { return };
    match &mut acc[idx as usize] {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        slot => *slot = Some(grad.to_vec()),
    }
}

/// Gradients produced by one backward pass, keyed by node handle.
pub struct Gradients {
    tape: u64,
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, node: NodeRef) -> Option<&[f64]> {
        if node.tape != self.tape {
            return None;
        }
        self.by_node.get(node.idx as usize)?.as_deref()
    }
}

pub(crate) mod kernels {
    use alloc::vec;
    use alloc::vec::Vec;

    /// a(m x k) @ b(k x n)
    pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in a_row.iter().enumerate() {
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    /// a(m x d) @ b(n x d)^T
    pub fn mm_abt(a: &[f64], b: &[f64], m: usize, d: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &a[i * d..(i + 1) * d];
            for j in 0..n {
                let b_row = &b[j * d..(j + 1) * d];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// a(m x k)^T @ b(m x n)
    pub fn mm_atb(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let b_row = &b[i * n..(i + 1) * n];
            for kk in 0..k {
                let av = a[i * k + kk];
                let out_row = &mut out[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        out
    }
}
