//! Multi-identity Gaussian avatars stored as a CP-factorized parameter tensor.
//!
//! Everything in this crate is `no_std` + `alloc`: the dense third-order
//! tensor kernels, CP decomposition and its gradients, the parameter layout
//! and activation rules, a differentiable 2D splat renderer, 2D skeletal
//! skinning, and the training harness that ties them together. File formats
//! and the command line live in the `cpsplat` crate.
#![no_std]
// NaN must fall into the reject branch of these comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cp;
pub mod deform;
mod error;
pub mod gaussian;
pub mod math;
pub mod render;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
