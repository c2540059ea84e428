//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live on a [`Tape`]; every op appends a node and returns a [`Var`]
//! handle. Computation runs in `f32` for training and `f64` for gradient
//! verification, selected by the [`Real`] type parameter.

pub mod error;
pub mod gradcheck;
#[allow(clippy::needless_range_loop)] // fixed-size register tiles index several arrays at once
mod kernels;
pub mod ops;
pub mod real;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::window_output_extent;
pub use ops::norm::BatchNormMode;
pub use ops::pool::PoolKind;
pub use ops::resize::ResizeKind;
pub use real::{MatRef, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
