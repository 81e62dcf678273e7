//! Dense-tensor math with reverse-mode automatic differentiation.
//!
//! Every model computation is assembled from the primitives in [`ops`], so
//! the whole system is checkable against central finite differences via
//! [`check_gradients`]. Tensors are immutable values; a [`Tape`] records the
//! operations applied to tracked tensors and replays them in reverse to
//! produce gradients. Tapes are single-threaded; parallel callers use
//! independent tapes.

pub mod check;
pub mod fmath;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;


pub use check::check_gradients;
pub use params::{build_params, ParamInit, ParamSet, ParamSpec};
pub use tape::{Gradients, NodeRef, Tape};
pub use tensor::Tensor;
