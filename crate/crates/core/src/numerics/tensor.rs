//! The dense tensor value type.
//!
//! A `Tensor` owns a row-major `f64` buffer plus its shape. Once built it is
//! immutable; operations return fresh tensors. Every public constructor and
//! operation rejects NaN/Inf so downstream code can rely on finite values.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::numerics::tape::NodeRef;

/// Dense row-major tensor of 64-bit floats.
///
/// `grad` is populated by [`crate::numerics::params::ParamSet::write_gradients`]
/// after a backward pass; `node` is the handle assigned when the tensor is
/// tracked on a tape (either as a watched leaf or as the output of a recorded
/// operation).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    node: Option<NodeRef>,
}

impl Tensor {
    /// Build a tensor from an explicit shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(CoreError::Dimension {
                op: "tensor",
                detail: alloc::format!("dimensions must be positive, got {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::Dimension {
                op: "tensor",
                detail: alloc::format!(
                    "shape {shape:?} implies {numel} elements, got {}",
                    data.len()
                ),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite { op: "tensor" });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            node: None,
        })
    }

    /// A `rows x cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// A matrix built from explicit rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::Dimension {
                op: "tensor",
                detail: "from_rows needs at least one row".into(),
            });
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::Dimension {
                op: "tensor",
                detail: "rows have unequal lengths".into(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    /// A `rows x cols` matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
            grad: None,
            node: None,
        }
    }

    /// A 1x1 tensor holding a single value.
    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::matrix(1, 1, vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(CoreError::Dimension {
                op: "tensor",
                detail: alloc::format!("expected rank-2 tensor, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    /// Element accessor for rank-2 tensors.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// The single element of a 1x1 tensor.
    pub fn value(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(CoreError::Contract(alloc::format!(
                "expected scalar tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// One full row as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        debug_assert!(grad.as_ref().map_or(true, |g| g.len() == self.data.len()));
        self.grad = grad;
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    pub(crate) fn set_node(&mut self, node: Option<NodeRef>) {
        self.node = node;
    }

    /// Whether the tensor participates in gradient recording.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Value copy without grad/node metadata.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            node: None,
        }
    }

    /// Shift one element by `delta` (finite-difference probing).
    pub fn nudge(&mut self, idx: usize, delta: f64) {
        self.data[idx] += delta;
    }

    /// In-place elementwise update, used by the optimizer. Rejects non-finite
    /// results so the finiteness invariant survives parameter updates.
    pub fn apply_update(&mut self, f: impl Fn(usize, f64) -> f64) -> Result<()> {
        for (i, v) in self.data.iter_mut().enumerate() {
            let next = f(i, *v);
            if !next.is_finite() {
                return Err(CoreError::NonFinite { op: "apply_update" });
            }
            *v = next;
        }
        Ok(())
    }
}
