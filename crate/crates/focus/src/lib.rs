//! FOCUS: spatial-spectral interpretability for frozen vision transformers on
//! hyperspectral cubes.
//!
//! The library trains a small set of parameters — class-specific spectral
//! prompt tokens, a `[SINK]` token with an attraction loss, and a per-band
//! adapter — on top of a frozen transformer encoder, then reads gradient-free
//! saliency straight out of the recorded attention: a 3-D spatial-spectral
//! cube, a spatial heatmap, and a spectral importance curve.

pub mod ablation;
pub mod backbone;
pub mod eval;
pub mod hsi;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod saliency;
pub mod parallel;
pub mod sink;
pub mod train;
