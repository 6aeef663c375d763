//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! The engine is intentionally narrow: it carries exactly the operators the
//! segmentation networks need (convolutions, pooling, normalisation, small
//! matrix products, pointwise nonlinearities and a fused BCE loss). Every
//! operator is generic over [`Real`] so the same network code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.
//!
//! Graphs are built eagerly. Each [`Tensor`] produced by an operator keeps
//! handles to its inputs and a backward closure; [`Tensor::backward`] walks
//! the graph in reverse topological order. Parameters live in a
//! [`ParamStore`] and receive their gradients when a graph that used them is
//! differentiated.

mod archive;
mod gemm;
mod init;
pub mod ops;
mod optim;
mod param;
mod real;
mod tensor;

pub use archive::{read_archive, write_archive, ArchiveEntry, ArchiveError, ArrayData};
pub use gemm::gemm;
pub use init::Init;
pub use optim::{AdamW, AdamWConfig, ReduceLrOnPlateau};
pub use param::{Param, ParamStore};
pub use real::{DType, Real};
pub use tensor::{grad_enabled, no_grad, Gradients, Tensor};
