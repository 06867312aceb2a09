//! Training-free appearance stylization for a triplane reconstruction
//! transformer.
//!
//! Image tokens from a small vision transformer drive a triplane decoder
//! through cross-attention. In the last `K` decoder layers a style image's
//! tokens are injected as a second key/value source and the two attention
//! outputs are blended with weight `alpha`. The crate also ships the
//! volumetric renderer, surface extraction, and the metric suite (Gram
//! style fidelity, Chamfer distance, F-score) used to evaluate a run.

pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod numerics;
pub mod renderer;
pub mod stylemetric;
pub mod transformer;

pub use error::{Error, Result};
