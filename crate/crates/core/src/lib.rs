//! Pixel-aligned graph-convolutional human mesh regression.
//!
//! A small reverse-mode tensor library carries every differentiable step:
//! a convolutional feature pyramid over the input image, per-vertex feature
//! sampling at dense-correspondence pixels, a semantic graph network that
//! regresses vertex positions, and mesh losses. A procedural humanoid and a
//! software rasterizer provide self-contained training data.

pub mod config;
pub mod correspondence;
mod error;
pub mod features;
pub mod graph;
mod init;
pub mod losses;
pub mod mesh;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tensor, TensorError};
