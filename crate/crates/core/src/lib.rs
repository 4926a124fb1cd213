//! Gradient-free sampling from unnormalized densities by Gaussian mixture approximation.

pub mod bank;
pub mod bench;
pub mod boed;
pub mod emgma;
pub mod error;
pub mod gauss;
pub mod lma;
pub mod metrics;
pub mod resample;
pub mod simplex;
pub mod target;
mod util;
pub mod wgma;

pub use error::{GmaError, Result};
