//! Driver gaze prediction from dashcam frames.
//!
//! The pipeline cleanses gaze datasets with object bounding boxes, tokenizes
//! each frame into a grid of patches, runs small per-token convolutions with
//! channel attention, relates tokens with a self-attention encoder, and
//! predicts one gaze intensity per token. Predictions are upsampled back to a
//! full-resolution gaze map for evaluation and display.

pub mod cleanse;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod synth;
pub mod tokenizer;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
