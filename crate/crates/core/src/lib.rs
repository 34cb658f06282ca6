//! Hyperspectral image segmentation toolkit.
//!
//! The pipeline runs calibration of raw cubes against white/dark references,
//! band selection, one of three segmentation architectures (per-pixel
//! spectral, 2D encoder-decoder, U-Net), AdamW training and confusion-matrix
//! metrics. A synthetic scene generator makes every stage runnable without
//! the real dataset.

pub mod bandselect;
pub mod calibration;
pub mod cli;
mod error;
pub mod hypercube;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
