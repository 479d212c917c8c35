//! LiDAR de-snowing at desk scale.
//!
//! Snow returns are spatially uncorrelated with their neighbors, so they are
//! hard to reconstruct from context. This crate trains a point reconstruction
//! network together with a reconstruction-difficulty regressor on range
//! images, entirely self-supervised, and classifies noise by thresholding
//! depth-debiased difficulty scores. It also ships the classical ROR/DROR
//! baselines, a procedural snow-scene synthesizer with exact ground truth,
//! and an evaluation harness.

pub mod filters;
pub mod geom;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
