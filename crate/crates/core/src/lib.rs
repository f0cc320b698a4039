//! Wavelet-decomposed hierarchical window attention for single-image
//! super-resolution.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, a reverse-mode tape, the multiply-add
//!   counter and the seeded generator.
//! - [`wavelet`]: orthonormal 2D Haar transform and wavelet value
//!   downsampling.
//! - [`windowing`]: window partition/merge and the hierarchical schedule.
//! - [`attention`]: dual feature extraction and the softmax-free spatial and
//!   channel self-correlation.
//! - [`network`]: transformer layers/blocks, the full model and checkpoints.
//! - [`imaging`]: PNM I/O, bicubic resampling, luma and PSNR/SSIM.
//! - [`complexity`]: analytic cost formulas and the scaling experiment.
//! - [`training`]: L1 loss, Adam, patch sampling and the toy training loop.

pub mod attention;
pub mod complexity;
mod error;
pub mod imaging;
pub mod network;
pub mod tensor;
pub mod training;
pub mod wavelet;
pub mod windowing;

pub use error::{Error, Result};
