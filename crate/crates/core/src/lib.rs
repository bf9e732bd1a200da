//! Conditional density estimation with hypernetwork-generated continuous
//! normalizing flows, a mixture density network baseline, synthetic
//! multimodal datasets, and sample-based evaluation metrics.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! bottom of this file pin the double-precision types used by the trainer,
//! the checkpoint formats and the command-line tool.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod density;
pub mod error;
pub mod eval;
pub mod flow;
pub mod hypernet;
pub mod mdn;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type FlowConfig64 = flow::FlowConfig<f64>;
pub type FlowParams64 = flow::FlowParams<f64>;
