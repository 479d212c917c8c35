//! Snow-noise dataset synthesis with exact ground truth.
//!
//! Noise labels come from comparing a noisy range image against a clean
//! reference of the same scene: a pixel is noise when the reference sees
//! strictly farther (beyond a sensing margin), because a snowflake on the
//! ray must occlude its background. Injection copies labeled noise returns
//! into a clean base scan wherever the return is physically detectable
//! under an atmospheric attenuation model, producing scans whose noise set
//! is known exactly.

mod scene;
mod snow;

pub use scene::{generate_scene, Aabb, BoxScatter, SceneSpec};
pub use snow::{generate_snow, RadialLaw, SnowModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Label, LabelMap, RangeImage};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("shape mismatch between images ({0}x{1} vs {2}x{3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("label map has no valid pixels")]
    NoValidPixels,
}

/// Attenuation and labeling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Sensing-error margin (meters) used when comparing range images.
    pub sensing_margin: f64,
    /// Adaptive laser gain added to the received intensity.
    pub laser_gain: f64,
    /// Atmospheric extinction coefficient (1/meter).
    pub extinction: f64,
    /// Detectable noise floor (unitless, same scale as intensity).
    pub noise_floor: f64,
    /// Reflectance assumed for rays that hit no geometry; injection into
    /// empty pixels is limited by attenuation alone.
    pub empty_intensity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sensing_margin: 1.0,
            laser_gain: 0.45,
            extinction: 0.02,
            noise_floor: 0.05,
            empty_intensity: 1.0,
        }
    }
}

fn check_shapes(a: &RangeImage, b: &RangeImage) -> Result<(), SynthError> {
    if !a.same_shape(b) {
        return Err(SynthError::ShapeMismatch(a.rows, a.cols, b.rows, b.cols));
    }
    Ok(())
}

/// Label the noisy image against a clean reference of the same scene.
///
/// A pixel is Noise when the reference range is at least `margin` beyond
/// the noisy return, or when the reference saw empty space there. Pixels
/// the noisy image did not observe stay Invalid.
pub fn extract_noise_labels(
    noisy: &RangeImage,
    clean_ref: &RangeImage,
    margin: f64,
) -> Result<LabelMap, SynthError> {
    check_shapes(noisy, clean_ref)?;
    let mut out = LabelMap::filled(noisy.rows, noisy.cols, Label::Invalid);
    for i in 0..noisy.range.len() {
        if !noisy.valid[i] {
            continue;
        }
        out.values[i] = if !clean_ref.valid[i] || clean_ref.range[i] >= noisy.range[i] + margin {
            Label::Noise
        } else {
            Label::Clean
        };
    }
    Ok(out)
}

/// Maximum range at which a return is detectable given the background
/// intensity and range: `min(-ln(n / (I + g)) / (2 * beta), R_B)`.
///
/// Returns the range and a flag that is set when the noise floor meets or
/// exceeds the received signal (the attenuation term is nonpositive and
/// the result is clamped to 0).
pub fn max_detectable_range(intensity: f64, base_range: f64, cfg: &SynthConfig) -> (f64, bool) {
    let signal = intensity + cfg.laser_gain;
    if cfg.noise_floor >= signal {
        return (0.0, true);
    }
    let attenuation = -(cfg.noise_floor / signal).ln() / (2.0 * cfg.extinction);
    (attenuation.min(base_range), false)
}

/// Copy labeled noise returns from `noisy` into the clean `base` scan.
///
/// A pixel takes the noisy value iff its label is Noise and the return is
/// within the detectable range computed from the base pixel; every other
/// pixel keeps the base value. The second output marks exactly the
/// injected pixels as Noise. Empty base pixels use `cfg.empty_intensity`
/// and no background clamp.
pub fn inject_noise(
    base: &RangeImage,
    noisy: &RangeImage,
    labels: &LabelMap,
    cfg: &SynthConfig,
) -> Result<(RangeImage, LabelMap), SynthError> {
    check_shapes(base, noisy)?;
    if labels.rows != base.rows || labels.cols != base.cols {
        return Err(SynthError::ShapeMismatch(base.rows, base.cols, labels.rows, labels.cols));
    }
    let mut out = base.clone();
    out.label = None;
    let mut gt = LabelMap::filled(base.rows, base.cols, Label::Invalid);
    for i in 0..base.range.len() {
        if base.valid[i] {
            gt.values[i] = Label::Clean;
        }
        if labels.values[i] != Label::Noise || !noisy.valid[i] {
            continue;
        }
        let r_max = if base.valid[i] {
            let intensity = base
                .intensity
                .as_ref()
                .map_or(cfg.empty_intensity, |p| p[i]);
            max_detectable_range(intensity, base.range[i], cfg).0
        } else {
            max_detectable_range(cfg.empty_intensity, f64::INFINITY, cfg).0
        };
        if noisy.range[i] <= r_max {
            out.range[i] = noisy.range[i];
            out.valid[i] = true;
            if let Some(intensity) = &mut out.intensity {
                intensity[i] = noisy.intensity.as_ref().map_or(0.0, |p| p[i]);
            }
            gt.values[i] = Label::Noise;
        }
    }
    Ok((out, gt))
}

/// Per-scan severity by noise fraction, after the Canadian adverse-driving
/// dataset's naming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseLevel {
    Light,
    Medium,
    Heavy,
    Extreme,
}

impl std::fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseLevel::Light => "Light",
            NoiseLevel::Medium => "Medium",
            NoiseLevel::Heavy => "Heavy",
            NoiseLevel::Extreme => "Extreme",
        };
        f.write_str(s)
    }
}

/// Noise fraction of a label map, `Noise / (Noise + Clean)`.
pub fn noise_fraction(gt: &LabelMap) -> Result<f64, SynthError> {
    let noise = gt.count(Label::Noise);
    let clean = gt.count(Label::Clean);
    if noise + clean == 0 {
        return Err(SynthError::NoValidPixels);
    }
    Ok(noise as f64 / (noise + clean) as f64)
}

/// Classify a scan by noise fraction: `< 2%` Light, `< 5%` Medium,
/// `< 10%` Heavy, else Extreme.
pub fn stratify_noise_level(gt: &LabelMap) -> Result<NoiseLevel, SynthError> {
    let f = noise_fraction(gt)?;
    Ok(if f < 0.02 {
        NoiseLevel::Light
    } else if f < 0.05 {
        NoiseLevel::Medium
    } else if f < 0.10 {
        NoiseLevel::Heavy
    } else {
        NoiseLevel::Extreme
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;

    fn img_1px(range: f64) -> RangeImage {
        let mut img = RangeImage::empty(1, 8);
        if range > 0.0 {
            img.set_pixel(0, 0, range);
        }
        img
    }

    #[test]
    fn extract_labels_direct_cases() {
        let labels = extract_noise_labels(&img_1px(5.0), &img_1px(10.0), 1.0).unwrap();
        assert_eq!(labels.at(0, 0), Label::Noise); // 10 >= 5 + 1

        let labels = extract_noise_labels(&img_1px(9.5), &img_1px(10.0), 1.0).unwrap();
        assert_eq!(labels.at(0, 0), Label::Clean); // 10 < 9.5 + 1

        // empty reference pixel is always noise
        let labels = extract_noise_labels(&img_1px(5.0), &img_1px(0.0), 1.0).unwrap();
        assert_eq!(labels.at(0, 0), Label::Noise);

        // unobserved noisy pixel stays invalid
        let labels = extract_noise_labels(&img_1px(0.0), &img_1px(10.0), 1.0).unwrap();
        assert_eq!(labels.at(0, 0), Label::Invalid);
    }

    #[test]
    fn extract_labels_shape_mismatch() {
        let a = RangeImage::empty(1, 8);
        let b = RangeImage::empty(2, 8);
        assert!(extract_noise_labels(&a, &b, 1.0).is_err());
    }

    #[test]
    fn max_detectable_range_formula() {
        let cfg = SynthConfig {
            noise_floor: 1.0,
            laser_gain: 0.0,
            extinction: 0.02,
            ..SynthConfig::default()
        };
        let (r, flagged) = max_detectable_range(std::f64::consts::E.powi(2), 100.0, &cfg);
        assert!(!flagged);
        assert_relative_eq!(r, 50.0, max_relative = 1e-12);
    }

    #[test]
    fn max_detectable_range_boundaries() {
        let cfg = SynthConfig::default();
        // noise floor equals signal: attenuation term is exactly zero
        let (r, flagged) = max_detectable_range(cfg.noise_floor - cfg.laser_gain, 100.0, &cfg);
        assert_eq!(r, 0.0);
        assert!(flagged);

        // noise floor above signal
        let (r, flagged) = max_detectable_range(0.0, 100.0, &SynthConfig {
            noise_floor: 2.0,
            laser_gain: 0.5,
            ..SynthConfig::default()
        });
        assert_eq!(r, 0.0);
        assert!(flagged);

        // vanishing extinction: the base range clamp dominates
        let cfg = SynthConfig { extinction: 1e-300, ..SynthConfig::default() };
        let (r, flagged) = max_detectable_range(0.8, 42.0, &cfg);
        assert!(!flagged);
        assert_eq!(r, 42.0);
    }

    #[test]
    fn inject_respects_detectable_range() {
        let cfg = SynthConfig::default();
        let mut base = img_1px(30.0);
        base.intensity = Some(vec![1.0; 8]);
        let noisy = img_1px(5.0);
        let labels = LabelMap::filled(1, 8, Label::Noise);

        let (out, gt) = inject_noise(&base, &noisy, &labels, &cfg).unwrap();
        assert_eq!(out.range_at(0, 0), 5.0);
        assert_eq!(gt.at(0, 0), Label::Noise);

        // same setup but the noisy return sits beyond the detectable range
        let mut tight = cfg;
        tight.extinction = 2.0; // r_max ~ 0.85 m
        let (out, gt) = inject_noise(&base, &noisy, &labels, &tight).unwrap();
        assert_eq!(out.range_at(0, 0), 30.0);
        assert_eq!(gt.at(0, 0), Label::Clean);
    }

    #[test]
    fn inject_all_clean_is_identity() {
        let cfg = SynthConfig::default();
        let base = img_1px(30.0);
        let noisy = img_1px(5.0);
        let labels = LabelMap::filled(1, 8, Label::Clean);
        let (out, gt) = inject_noise(&base, &noisy, &labels, &cfg).unwrap();
        assert_eq!(out.range, base.range);
        assert_eq!(gt.at(0, 0), Label::Clean);
        assert_eq!(gt.count(Label::Noise), 0);
    }

    #[test]
    fn inject_conservation_random_pair() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let cfg = SynthConfig::default();
        let (rows, cols) = (8, 32);
        let mut base = RangeImage::empty(rows, cols);
        let mut noisy = RangeImage::empty(rows, cols);
        let mut labels = LabelMap::filled(rows, cols, Label::Clean);
        for v in 0..rows {
            for u in 0..cols {
                if rng.random_bool(0.7) {
                    base.set_pixel(v, u, rng.random_range(1.0..80.0));
                }
                if rng.random_bool(0.3) {
                    noisy.set_pixel(v, u, rng.random_range(0.5..60.0));
                    labels.set(v, u, Label::Noise);
                }
            }
        }
        base.intensity = Some((0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect());
        let (out, gt) = inject_noise(&base, &noisy, &labels, &cfg).unwrap();
        for i in 0..out.range.len() {
            if gt.values[i] == Label::Noise {
                assert_eq!(out.range[i], noisy.range[i], "injected pixel {i}");
            } else {
                assert_eq!(out.range[i], base.range[i], "conserved pixel {i}");
                assert_eq!(out.valid[i], base.valid[i]);
            }
        }
    }

    #[test]
    fn extraction_recovers_injection() {
        // when injected ranges are strictly below base ranges, labeling the
        // synthesized scan against the base recovers the injected set
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cfg = SynthConfig::default();
        let (rows, cols) = (6, 24);
        let mut base = RangeImage::empty(rows, cols);
        let mut noisy = RangeImage::empty(rows, cols);
        for v in 0..rows {
            for u in 0..cols {
                base.set_pixel(v, u, rng.random_range(40.0..90.0));
                if rng.random_bool(0.25) {
                    noisy.set_pixel(v, u, rng.random_range(1.0..20.0));
                }
            }
        }
        let labels = extract_noise_labels(&noisy, &base, cfg.sensing_margin).unwrap();
        let (synth, gt) = inject_noise(&base, &noisy, &labels, &cfg).unwrap();
        let recovered = extract_noise_labels(&synth, &base, 1e-9).unwrap();
        for i in 0..gt.values.len() {
            if gt.values[i] == Label::Noise {
                assert_eq!(recovered.values[i], Label::Noise);
            } else {
                assert_ne!(recovered.values[i], Label::Noise);
            }
        }
    }

    #[test]
    fn stratify_thresholds() {
        let mut gt = LabelMap::filled(1, 100, Label::Clean);
        assert_eq!(stratify_noise_level(&gt).unwrap(), NoiseLevel::Light);
        for u in 0..7 {
            gt.set(0, u, Label::Noise);
        }
        assert_eq!(stratify_noise_level(&gt).unwrap(), NoiseLevel::Heavy); // f = 0.07
        for u in 0..50 {
            gt.set(0, u, Label::Noise);
        }
        assert_eq!(stratify_noise_level(&gt).unwrap(), NoiseLevel::Extreme); // f = 0.5
        let empty = LabelMap::filled(1, 4, Label::Invalid);
        assert!(stratify_noise_level(&empty).is_err());
    }
}
