//! Differentiable saliency-driven resampling of images.
//!
//! A saliency map pulls sample positions toward heavy cells through a
//! Gaussian attraction kernel; the resulting grid drives a bilinear sampler
//! whose output feeds a small classifier. Every stage has an explicit
//! backward rule, so the whole chain trains by plain gradient descent.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
mod error;
pub mod gradcheck;
mod math;
pub mod nets;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod sampler;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use nets::{SaliencyNet, TaskNet};
pub use pipeline::{build_default_nets, downsample, Forward, Mode, Model, PipelineConfig};
pub use tensor::Tensor;
