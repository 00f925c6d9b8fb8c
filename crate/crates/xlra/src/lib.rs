//! Periodic microstructure generation, an FFT-based elastic strain oracle,
//! and a per-frequency low-rank surrogate for local strain/stress fields.

pub mod basis;
pub mod elasticity;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod microstructure;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
