//! Multi-agent transformer forecasting of disease trajectories on a small,
//! self-contained tensor and autodiff core.
pub mod autodiff;
pub mod data;
pub mod error;
pub mod features;
pub mod harness;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
