//! Finite-temperature contrastive learning on energy-based models.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod sampler;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
