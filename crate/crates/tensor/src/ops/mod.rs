//! Differentiable operations on [`crate::Tensor`].

mod binary;
mod layout;
mod matmul;
mod reduce;
mod softmax;
mod unary;

pub use unary::LEAKY_RELU_SLOPE;
