//! Event-guided adaptive depth sensing at desk scale.

pub mod checkpoint;
pub mod dataset;
pub mod depth_extrap;
pub mod error;
pub mod event_core;
pub mod keyframe;
pub mod metrics;
pub mod pipeline;
pub mod scene_sim;
pub mod train_log;

pub use error::{Error, Result};
