//! Tensor-side components of collaborative reconstruction and repair:
//! the frozen encoder, the masked repair decoder, the segmentation head,
//! their optimisers, the two-stage trainer and inference.

pub mod backbone;
pub mod config;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod repair_net;
pub mod segnet;
pub mod trainer;

pub use config::CrrConfig;
pub use error::{Error, Result};
pub use model::{CrrModel, Inference};
