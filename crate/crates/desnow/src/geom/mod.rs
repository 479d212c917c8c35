//! Point-cloud and range-image data model plus the spherical projection
//! between them.
//!
//! A rotating LiDAR sweep maps naturally onto a dense grid indexed by laser
//! channel (row) and azimuth bin (column). Projection keeps the nearest
//! return on pixel collisions; unprojection reads the per-row elevation table
//! from [`SensorConfig`] and places each pixel at its azimuth bin center so
//! that re-projection lands on the same pixel.

pub mod io;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid sensor config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
}

/// One LiDAR return. Coordinates in meters, intensity as unitless
/// reflectance in `[0, 1]`, `laser_id` selecting the range-image row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    pub laser_id: u16,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64, laser_id: u16) -> Self {
        Self { x, y, z, intensity, laser_id }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// Ordered list of returns; one full sweep in sensor coordinates.
pub type PointCloud = Vec<Point>;

/// Euclidean distance of a point from the sensor origin.
pub fn range_of(p: &Point) -> f64 {
    (p.x * p.x + p.y * p.y + p.z * p.z).sqrt()
}

/// Geometry of the sensor: laser channel count, horizontal angular
/// resolution, maximum range, and one elevation angle per channel (radians,
/// used only for unprojection and scene ray-casting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub n_rows: usize,
    pub delta_h: f64,
    pub max_range: f64,
    pub elevations: Vec<f64>,
}

impl SensorConfig {
    pub fn new(
        n_rows: usize,
        delta_h: f64,
        max_range: f64,
        elevations: Vec<f64>,
    ) -> Result<Self, GeomError> {
        let cfg = Self { n_rows, delta_h, max_range, elevations };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Linear elevation table from `elev_bottom` (row 0) to `elev_top`
    /// (last row), angles in radians.
    pub fn with_linear_elevation(
        n_rows: usize,
        delta_h: f64,
        max_range: f64,
        elev_bottom: f64,
        elev_top: f64,
    ) -> Result<Self, GeomError> {
        let elevations = (0..n_rows)
            .map(|v| {
                if n_rows == 1 {
                    elev_bottom
                } else {
                    elev_bottom + (elev_top - elev_bottom) * v as f64 / (n_rows - 1) as f64
                }
            })
            .collect();
        Self::new(n_rows, delta_h, max_range, elevations)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.n_rows < 1 {
            return Err(GeomError::InvalidConfig("n_rows must be >= 1".into()));
        }
        if !(self.delta_h > 0.0) || !self.delta_h.is_finite() {
            return Err(GeomError::InvalidConfig("delta_h must be positive".into()));
        }
        if self.n_cols() < 8 {
            return Err(GeomError::InvalidConfig("n_cols must be >= 8".into()));
        }
        if !(self.max_range > 0.0) || !self.max_range.is_finite() {
            return Err(GeomError::InvalidConfig("max_range must be positive".into()));
        }
        if self.elevations.len() != self.n_rows {
            return Err(GeomError::InvalidConfig(format!(
                "elevation table has {} entries for {} rows",
                self.elevations.len(),
                self.n_rows
            )));
        }
        if self.elevations.iter().any(|e| !e.is_finite()) {
            return Err(GeomError::InvalidConfig("non-finite elevation".into()));
        }
        Ok(())
    }

    /// Number of azimuth bins, `round(2*pi / delta_h)`.
    pub fn n_cols(&self) -> usize {
        (2.0 * PI / self.delta_h).round() as usize
    }
}

/// Per-pixel classification outcome. `Invalid` marks pixels without a
/// return; it never mixes with the other two on the same pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Clean,
    Noise,
    Invalid,
}

impl Label {
    pub const CLEAN_U8: u8 = 0;
    pub const NOISE_U8: u8 = 1;
    pub const INVALID_U8: u8 = 255;

    pub fn to_u8(self) -> u8 {
        match self {
            Label::Clean => Self::CLEAN_U8,
            Label::Noise => Self::NOISE_U8,
            Label::Invalid => Self::INVALID_U8,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            Self::CLEAN_U8 => Some(Label::Clean),
            Self::NOISE_U8 => Some(Label::Noise),
            Self::INVALID_U8 => Some(Label::Invalid),
            _ => None,
        }
    }
}

/// Dense per-pixel label plane aligned with a [`RangeImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Label>,
}

impl LabelMap {
    pub fn filled(rows: usize, cols: usize, label: Label) -> Self {
        Self { rows, cols, values: vec![label; rows * cols] }
    }

    pub fn at(&self, v: usize, u: usize) -> Label {
        self.values[v * self.cols + u]
    }

    pub fn set(&mut self, v: usize, u: usize, label: Label) {
        self.values[v * self.cols + u] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.values.iter().filter(|&&l| l == label).count()
    }

    /// Mirror columns (azimuth reversal).
    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.rows {
            for u in 0..self.cols {
                out.values[v * self.cols + u] = self.values[v * self.cols + (self.cols - 1 - u)];
            }
        }
        out
    }
}

/// Dense laser-id x azimuth grid of ranges. Invalid pixels hold range 0 and
/// validity false; valid ranges lie in `(0, max_range]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub rows: usize,
    pub cols: usize,
    pub range: Vec<f64>,
    pub valid: Vec<bool>,
    pub intensity: Option<Vec<f64>>,
    pub label: Option<LabelMap>,
}

impl RangeImage {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            range: vec![0.0; rows * cols],
            valid: vec![false; rows * cols],
            intensity: None,
            label: None,
        }
    }

    pub fn idx(&self, v: usize, u: usize) -> usize {
        v * self.cols + u
    }

    pub fn range_at(&self, v: usize, u: usize) -> f64 {
        self.range[v * self.cols + u]
    }

    pub fn valid_at(&self, v: usize, u: usize) -> bool {
        self.valid[v * self.cols + u]
    }

    pub fn set_pixel(&mut self, v: usize, u: usize, range: f64) {
        let i = v * self.cols + u;
        self.range[i] = range;
        self.valid[i] = range > 0.0;
    }

    /// Clear a pixel back to the invalid encoding (range 0, validity false).
    pub fn clear_pixel(&mut self, v: usize, u: usize) {
        let i = v * self.cols + u;
        self.range[i] = 0.0;
        self.valid[i] = false;
        if let Some(int) = &mut self.intensity {
            int[i] = 0.0;
        }
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &RangeImage) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<(), GeomError> {
        if self.rows != rows || self.cols != cols {
            return Err(GeomError::ShapeMismatch {
                expected_rows: rows,
                expected_cols: cols,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Mirror columns (azimuth reversal), carrying all channels along.
    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.rows {
            for u in 0..self.cols {
                let src = v * self.cols + (self.cols - 1 - u);
                let dst = v * self.cols + u;
                out.range[dst] = self.range[src];
                out.valid[dst] = self.valid[src];
                if let (Some(oi), Some(si)) = (&mut out.intensity, &self.intensity) {
                    oi[dst] = si[src];
                }
            }
        }
        if let Some(lbl) = &self.label {
            out.label = Some(lbl.flipped_horizontal());
        }
        out
    }
}

/// Points skipped by [`project`], by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    /// `laser_id` out of `[0, n_rows)`.
    pub rejected_laser_id: usize,
    /// Non-finite coordinate or intensity.
    pub rejected_nonfinite: usize,
    /// Range 0 or beyond `max_range`.
    pub rejected_range: usize,
}

impl ProjectionStats {
    pub fn total(&self) -> usize {
        self.rejected_laser_id + self.rejected_nonfinite + self.rejected_range
    }
}

/// Spherical projection of a cloud onto the range-image grid.
///
/// Column `u = floor((pi - atan2(y, x)) / delta_h) mod n_cols`, row
/// `v = laser_id`, pixel value `sqrt(x^2 + y^2 + z^2)`. When two points land
/// on the same pixel the smaller range wins (nearest return).
pub fn project(cloud: &[Point], cfg: &SensorConfig) -> (RangeImage, ProjectionStats) {
    let rows = cfg.n_rows;
    let cols = cfg.n_cols();
    let mut img = RangeImage::empty(rows, cols);
    let mut intensity = vec![0.0; rows * cols];
    let mut stats = ProjectionStats::default();

    for p in cloud {
        if !p.is_finite() {
            stats.rejected_nonfinite += 1;
            continue;
        }
        if (p.laser_id as usize) >= rows {
            stats.rejected_laser_id += 1;
            continue;
        }
        let r = range_of(p);
        if r <= 0.0 || r > cfg.max_range {
            stats.rejected_range += 1;
            continue;
        }
        let t = (PI - p.y.atan2(p.x)) / cfg.delta_h;
        let u = (t.floor() as i64).rem_euclid(cols as i64) as usize;
        let v = p.laser_id as usize;
        let i = v * cols + u;
        if !img.valid[i] || r < img.range[i] {
            img.range[i] = r;
            img.valid[i] = true;
            intensity[i] = p.intensity;
        }
    }

    img.intensity = Some(intensity);
    (img, stats)
}

/// Inverse of [`project`]: every valid pixel becomes one point at its azimuth
/// bin center, with elevation taken from the sensor's per-row table.
pub fn unproject(img: &RangeImage, cfg: &SensorConfig) -> Result<PointCloud, GeomError> {
    img.check_shape(cfg.n_rows, cfg.n_cols())?;
    let mut cloud = Vec::with_capacity(img.n_valid());
    for v in 0..img.rows {
        let elev = cfg.elevations[v];
        let (sin_e, cos_e) = elev.sin_cos();
        for u in 0..img.cols {
            let i = v * img.cols + u;
            if !img.valid[i] {
                continue;
            }
            let r = img.range[i];
            let az = PI - (u as f64 + 0.5) * cfg.delta_h;
            let d = r * cos_e;
            cloud.push(Point {
                x: d * az.cos(),
                y: d * az.sin(),
                z: r * sin_e,
                intensity: img.intensity.as_ref().map_or(0.0, |p| p[i]),
                laser_id: v as u16,
            });
        }
    }
    Ok(cloud)
}
