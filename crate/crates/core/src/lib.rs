//! Core arithmetic for bias-vector model editing.
//!
//! Everything in this crate is pure computation over in-memory tensors:
//! checkpoint delta construction and application, a small trainable
//! transformer encoder with an MLM head, and SEAT/WEAT association
//! statistics. File formats, dataset parsing, and the CLI live in the
//! companion `biasvec` crate.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core carries no
//! IO dependencies.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arith;
pub mod model;
pub mod seat;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use arith::{BiasVector, LayerFilter};
pub use tensor::{Dtype, Tensor, TensorMap};
