//! Dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! The engine is deliberately minimal: row-major dense tensors, a
//! define-by-run tape rebuilt per forward pass, and exactly the operation
//! set a small ranking model needs (matmul, masked softmax, layer norm,
//! row gather/scatter, embedding lookup, straight-through top-k gather,
//! elementwise math, reductions, cross-entropy). No broadcasting beyond
//! row-vector bias addition, no views, no fusion.
//!
//! Precision is a type parameter: train at `f32`, run gradient checks at
//! `f64`. Everything is single-threaded within one forward/backward pass,
//! so repeated runs over the same inputs are bit-identical.

pub mod error;
pub mod gradcheck;
pub mod real;
pub mod store;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use real::Real;
pub use store::{ParamEntry, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
