//! Sequence-aware needle segmentation for ultrasound video.

pub mod baselines;
pub mod checkpoint;
pub mod datamodel;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod kfblock;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod overlay;
pub mod synthgen;

pub use error::{Error, Result};
