//! Differentiable operators.
//!
//! Image tensors are NCHW. Operators validate shapes with assertions: they
//! are internal building blocks and callers are expected to check user
//! input before reaching them.

mod conv;
mod linalg;
mod loss;
mod norm;
mod pointwise;
mod pool;
mod reduce;
mod shape;

pub use conv::{conv2d, conv_transpose2d};
pub use linalg::matmul;
pub use loss::bce_with_logits;
pub use norm::{batch_norm2d, layer_norm};
pub use pointwise::{
    add, add_bcast, affine, gelu, mul, mul_bcast, relu, scale, sigmoid, sub, tanh,
};
pub use pool::{max_pool2d, upsample_nearest};
pub use reduce::{mean, softmax, sum};
pub use shape::{cat, expand, narrow, permute, reshape};
