//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a row-major buffer plus, when any input requires a
//! gradient, a link to the operation that produced it. Calling
//! [`Tensor::backward`] on a scalar walks those links in reverse topological
//! order and accumulates gradients into the leaves.

mod element;
mod error;
pub mod gradcheck;
mod ops;
mod rng;
mod shape;
mod tensor;

pub use element::{gemm, gemm_ld, DType, Element};
pub use error::{Result, TensorError};
pub use ops::LEAKY_RELU_SLOPE;
pub use rng::Rng;
pub use shape::{broadcast_shape, numel, strides};
pub use tensor::{ParentGrads, Tensor};
