//! Self-supervised representation learning for 1D biosignals.
//!
//! The crate covers the whole desk-scale pipeline: ECG ingestion and
//! synthesis, view augmentations, a small reverse-mode autodiff engine with a
//! 1D-CNN encoder, the SimCLR / BYOL / SwAV objectives, training and linear
//! evaluation, multi-label metrics, and embedding-overlap analysis.

// `!(x > 0.0)` style guards reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod augment;
pub mod autodiff;
pub mod distshift;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
