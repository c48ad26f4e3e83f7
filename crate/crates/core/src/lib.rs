//! Cluster-based adaptive low-rank image compression.
//!
//! An image is cut into overlapping `p×p` patches, the patches are grouped
//! with k-means, and each cluster matrix gets its own truncated SVD whose rank
//! follows an energy threshold. A global truncated-SVD compressor is provided
//! as the baseline, together with the compression-factor bookkeeping needed to
//! compare the two at matched compression, and a region-restricted metric
//! suite (MSE, PSNR, SSIM, IoU, relative error, Sobel edge preservation).
//!
//! The `parallel` feature (on by default) runs the data-parallel inner loops
//! on rayon. Every result is bit-identical to the sequential build and to any
//! worker count.

pub mod archive;
pub mod clustering;
pub mod commands;
mod error;
pub mod imageio;
pub mod linalg;
pub mod metrics;
mod par;
pub mod patching;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};

/// Grayscale image stored as `f64` intensities, row-major `m × n`.
pub type ImageMatrix = ndarray::Array2<f64>;

/// Intensity ceiling for 8-bit images.
pub const MAX_8BIT: u32 = 255;
