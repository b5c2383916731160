//! Turns a photograph of a natural object into a composited image of an
//! animal that fills the object's silhouette, and measures how well the shape
//! survives.
//!
//! The pipeline runs five stages over pluggable backends: open-vocabulary
//! detection plus promptable segmentation, concept interpretation by a
//! multimodal model, monocular depth estimation, depth-controlled inpainting,
//! and a fixed-opacity blend. Deterministic fakes for every backend ship with
//! the library.

pub mod backends;
pub mod cli;
pub mod concept;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod imaging;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
