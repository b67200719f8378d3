//! Motion segmentation and egomotion from event-camera normal flow.
//!
//! Each slice of events goes through over-segmentation, a planar-scene
//! residual split, temporal background matching with translation recovery,
//! and hierarchical merging with tracking. See [`pipeline::step`].

pub mod background;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod lie;
pub mod merging;
pub mod pipeline;
pub mod planar_fit;
pub mod tracking;

pub use config::Config;
pub use error::{Error, Result};
