//! File formats, figures and the command-line driver for `zoomnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod exec;
pub mod figures;
pub mod metrics;
mod wire;

pub use error::{Error, Result};
