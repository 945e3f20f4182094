//! Model-independent building blocks for collaborative reconstruction and
//! repair anomaly detection.
//!
//! This crate holds everything that does not need a tensor runtime:
//! pseudo-anomaly synthesis, the final anomaly-map recombination, the
//! evaluation metrics and a small procedural corpus used for desk-scale
//! experiments. It compiles for `wasm32-unknown-unknown`.

pub mod error;
pub mod image;
pub mod metrics;
pub mod resize;
pub mod scoring;
pub mod synthesis;
pub mod toy;

pub use error::{Error, Result};
pub use image::{Grid, Image, Mask};
