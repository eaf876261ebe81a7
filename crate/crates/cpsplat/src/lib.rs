//! File formats and commands around `cpsplat-core`: run configs,
//! checkpoints, PPM images, on-disk datasets and tensors.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod ppm;
pub mod tensor_file;

pub use error::{Error, Result};
