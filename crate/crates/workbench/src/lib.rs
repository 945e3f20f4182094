//! Operational shell around the model: dataset trees, run directories,
//! score sidecars, heatmaps and the `crr` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod heatmap;
pub mod imageio;
pub mod manifest;
pub mod pipeline;
pub mod toytree;

pub use error::{Error, Result};
