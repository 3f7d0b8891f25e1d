//! Desk-scale multimodal classifier: a 3D-volume transformer encoder with masked-patch
//! self-supervised pretraining, a tabular metadata embedding with a learnable
//! missing-record token, cross-attention fusion, and a channel-mixing refinement stack,
//! plus the cross-validation / ablation / feature-importance harness around it.
//!
//! Everything runs on a small define-by-run autodiff tape ([`autodiff::Tape`]) over flat
//! `f32` buffers; `f64` is supported for gradient-check tests.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
