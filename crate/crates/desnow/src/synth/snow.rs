//! Procedural snow returns: pixels drawn uniformly over the grid, ranges
//! from a radial law truncated to the sensor's usable span. Real snow
//! clusters near the sensor, which the default exponential law imitates.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Label, LabelMap, RangeImage, SensorConfig};

/// Radial distribution of snow return ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialLaw {
    /// Exponential with the given mean, concentrating near the sensor.
    Exponential { mean: f64 },
    /// Uniform over the given span.
    Uniform { min: f64, max: f64 },
}

impl RadialLaw {
    /// Inverse-CDF sample truncated to `(lo, hi)`.
    fn sample(&self, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        match *self {
            RadialLaw::Exponential { mean } => {
                let a = (-lo / mean).exp();
                let b = (-hi / mean).exp();
                let u: f64 = rng.random();
                -mean * (a - u * (a - b)).ln()
            }
            RadialLaw::Uniform { min, max } => {
                let lo = min.max(lo);
                let hi = max.min(hi);
                if hi <= lo {
                    return lo;
                }
                rng.random_range(lo..hi)
            }
        }
    }
}

/// Count range plus radial law for one scan's snow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnowModel {
    pub count_range: (usize, usize),
    pub radial: RadialLaw,
}

impl Default for SnowModel {
    fn default() -> Self {
        Self { count_range: (300, 1200), radial: RadialLaw::Exponential { mean: 8.0 } }
    }
}

/// Lower truncation of snow ranges; returns closer than this are not
/// produced by the sensor.
pub const MIN_SNOW_RANGE: f64 = 0.5;

/// Place exactly `count` snow returns on distinct pixels (clamped to the
/// grid size), ranges drawn from `law` truncated to
/// `(MIN_SNOW_RANGE, max_range)`. Deterministic per seed. The returned
/// image carries a label plane marking every return as Noise.
pub fn generate_snow(
    count: usize,
    law: RadialLaw,
    seed: u64,
    cfg: &SensorConfig,
) -> RangeImage {
    let rows = cfg.n_rows;
    let cols = cfg.n_cols();
    let n_pixels = rows * cols;
    let count = count.min(n_pixels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // partial Fisher-Yates: the first `count` entries become the sample
    let mut indices: Vec<u32> = (0..n_pixels as u32).collect();
    for k in 0..count {
        let j = rng.random_range(k..n_pixels);
        indices.swap(k, j);
    }

    let mut img = RangeImage::empty(rows, cols);
    let mut labels = LabelMap::filled(rows, cols, Label::Invalid);
    for &i in &indices[..count] {
        let i = i as usize;
        let r = law.sample(&mut rng, MIN_SNOW_RANGE, cfg.max_range);
        img.range[i] = r.clamp(MIN_SNOW_RANGE, cfg.max_range);
        img.valid[i] = true;
        labels.values[i] = Label::Noise;
    }
    img.label = Some(labels);
    img
}
