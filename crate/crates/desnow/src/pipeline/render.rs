//! PNG rendering: bird's-eye scatter of classification outcomes, a
//! range-image outcome grid, and a difficulty heatmap.
//!
//! Outcome colors (noise = positive): red = true positive, green = false
//! positive, gray = true negative, yellow = false negative.

use image::{Rgb, RgbImage};

use crate::geom::{unproject, Label, LabelMap, RangeImage, SensorConfig};
use crate::model::ScorePlane;

pub const COLOR_TP: Rgb<u8> = Rgb([200, 30, 30]);
pub const COLOR_FP: Rgb<u8> = Rgb([40, 170, 40]);
pub const COLOR_TN: Rgb<u8> = Rgb([128, 128, 128]);
pub const COLOR_FN: Rgb<u8> = Rgb([235, 200, 40]);
pub const COLOR_BACKGROUND: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevConfig {
    /// Raster resolution, meters per pixel.
    pub meters_per_pixel: f64,
    /// Half-width of the square view, meters; the sensor sits at center.
    pub extent: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self { meters_per_pixel: 0.2, extent: 50.0 }
    }
}

fn outcome_color(pred: Label, gt: Label) -> Option<Rgb<u8>> {
    match (pred, gt) {
        (Label::Noise, Label::Noise) => Some(COLOR_TP),
        (Label::Noise, Label::Clean) => Some(COLOR_FP),
        (Label::Clean, Label::Clean) => Some(COLOR_TN),
        (Label::Clean, Label::Noise) => Some(COLOR_FN),
        _ => None,
    }
}

/// Raster coordinates of a world point; None outside the view.
pub fn bev_pixel(x: f64, y: f64, cfg: &BevConfig) -> Option<(u32, u32)> {
    let size = bev_size(cfg) as f64;
    let ix = ((x + cfg.extent) / cfg.meters_per_pixel).floor();
    let iy = ((cfg.extent - y) / cfg.meters_per_pixel).floor();
    if ix < 0.0 || iy < 0.0 || ix >= size || iy >= size {
        return None;
    }
    Some((ix as u32, iy as u32))
}

pub fn bev_size(cfg: &BevConfig) -> u32 {
    (2.0 * cfg.extent / cfg.meters_per_pixel).ceil() as u32
}

fn draw_legend(img: &mut RgbImage) {
    let swatches = [COLOR_TP, COLOR_FP, COLOR_TN, COLOR_FN];
    for (k, color) in swatches.iter().enumerate() {
        for dy in 0..8u32 {
            for dx in 0..8u32 {
                let x = 2 + k as u32 * 10 + dx;
                let y = 2 + dy;
                if x < img.width() && y < img.height() {
                    img.put_pixel(x, y, *color);
                }
            }
        }
    }
}

/// Bird's-eye scatter of per-pixel outcomes. Points are drawn in row-major
/// scan order, later points overwriting earlier ones.
pub fn render_bev(
    img: &RangeImage,
    pred: &LabelMap,
    gt: &LabelMap,
    sensor: &SensorConfig,
    cfg: &BevConfig,
) -> RgbImage {
    let size = bev_size(cfg);
    let mut out = RgbImage::from_pixel(size, size, COLOR_BACKGROUND);
    if let Ok(cloud) = unproject(img, sensor) {
        let mut k = 0;
        for i in 0..img.range.len() {
            if !img.valid[i] {
                continue;
            }
            let p = &cloud[k];
            k += 1;
            let Some(color) = outcome_color(pred.values[i], gt.values[i]) else {
                continue;
            };
            if let Some((x, y)) = bev_pixel(p.x, p.y, cfg) {
                out.put_pixel(x, y, color);
            }
        }
    }
    draw_legend(&mut out);
    out
}

/// Range-image outcome grid, upscaled by an integer factor.
pub fn render_range_outcomes(pred: &LabelMap, gt: &LabelMap, scale: u32) -> RgbImage {
    assert_eq!(pred.rows, gt.rows);
    assert_eq!(pred.cols, gt.cols);
    let scale = scale.max(1);
    let mut out = RgbImage::from_pixel(
        pred.cols as u32 * scale,
        pred.rows as u32 * scale,
        COLOR_BACKGROUND,
    );
    for v in 0..pred.rows {
        for u in 0..pred.cols {
            let color = outcome_color(pred.at(v, u), gt.at(v, u)).unwrap_or(COLOR_BACKGROUND);
            for dy in 0..scale {
                for dx in 0..scale {
                    out.put_pixel(u as u32 * scale + dx, v as u32 * scale + dy, color);
                }
            }
        }
    }
    out
}

/// Monotone blue-to-red map: t = 0 deep blue, t = 1 bright red.
pub fn difficulty_color(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([(255.0 * t) as u8, 40, (255.0 * (1.0 - t)) as u8])
}

/// Difficulty heatmap over the range-image grid, min-max normalized over
/// present scores; absent pixels are black.
pub fn render_difficulty(scores: &ScorePlane, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let present: Vec<f64> = scores
        .values
        .iter()
        .zip(&scores.present)
        .filter(|(_, &p)| p)
        .map(|(&s, _)| s)
        .collect();
    let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = RgbImage::from_pixel(
        scores.cols as u32 * scale,
        scores.rows as u32 * scale,
        COLOR_BACKGROUND,
    );
    for v in 0..scores.rows {
        for u in 0..scores.cols {
            let i = v * scores.cols + u;
            if !scores.present[i] {
                continue;
            }
            let color = difficulty_color((scores.values[i] - lo) / span);
            for dy in 0..scale {
                for dx in 0..scale {
                    out.put_pixel(u as u32 * scale + dx, v as u32 * scale + dy, color);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sensor() -> SensorConfig {
        SensorConfig::new(2, 2.0 * PI / 64.0, 100.0, vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn empty_cloud_draws_blank_canvas_with_legend() {
        let sensor = sensor();
        let img = RangeImage::empty(2, 64);
        let labels = LabelMap::filled(2, 64, Label::Invalid);
        let cfg = BevConfig::default();
        let out = render_bev(&img, &labels, &labels, &sensor, &cfg);
        assert_eq!(out.width(), bev_size(&cfg));
        // legend swatches present
        assert_eq!(*out.get_pixel(3, 3), COLOR_TP);
        assert_eq!(*out.get_pixel(13, 3), COLOR_FP);
        // interior untouched
        assert_eq!(*out.get_pixel(250, 250), COLOR_BACKGROUND);
    }

    #[test]
    fn four_outcomes_land_at_computed_pixels() {
        let sensor = sensor();
        let cfg = BevConfig::default();
        let mut img = RangeImage::empty(2, 64);
        let mut pred = LabelMap::filled(2, 64, Label::Invalid);
        let mut gt = LabelMap::filled(2, 64, Label::Invalid);
        // four well-separated azimuth bins at 10 m
        let cases = [
            (0usize, Label::Noise, Label::Noise, COLOR_TP),
            (16, Label::Noise, Label::Clean, COLOR_FP),
            (32, Label::Clean, Label::Clean, COLOR_TN),
            (48, Label::Clean, Label::Noise, COLOR_FN),
        ];
        for &(u, p, g, _) in &cases {
            img.set_pixel(0, u, 10.0);
            pred.set(0, u, p);
            gt.set(0, u, g);
        }
        let out = render_bev(&img, &pred, &gt, &sensor, &cfg);
        let cloud = unproject(&img, &sensor).unwrap();
        for (k, &(_, _, _, color)) in cases.iter().enumerate() {
            let (x, y) = bev_pixel(cloud[k].x, cloud[k].y, &cfg).unwrap();
            assert_eq!(*out.get_pixel(x, y), color, "case {k}");
        }
    }

    #[test]
    fn all_tn_scan_is_all_gray() {
        let pred = LabelMap::filled(2, 8, Label::Clean);
        let out = render_range_outcomes(&pred, &pred, 1);
        assert!(out.pixels().all(|&p| p == COLOR_TN));
    }

    #[test]
    fn difficulty_colormap_is_monotone_in_red() {
        let mut last = -1i32;
        for i in 0..=20 {
            let c = difficulty_color(i as f64 / 20.0);
            assert!((c.0[0] as i32) >= last);
            last = c.0[0] as i32;
        }
    }
}
