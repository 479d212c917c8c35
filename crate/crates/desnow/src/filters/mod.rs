//! Sparsity-based de-noising baselines: radius outlier removal with a fixed
//! search radius (ROR) and with a range-proportional radius (DROR).
//!
//! DROR widens the search radius with distance to follow the sensor's
//! angular sampling: at range `r` neighboring returns on a surface sit
//! roughly `r * delta_h` apart, so the radius `max(sr_min, gamma * r *
//! delta_h)` tracks the expected spacing where a fixed radius undercounts.

mod kdtree;

pub use kdtree::KdTree;

use thiserror::Error;

use crate::geom::{range_of, unproject, Label, LabelMap, Point, RangeImage, SensorConfig};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

/// Fixed-radius outlier removal parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RorConfig {
    pub search_radius: f64,
    pub min_neighbors: usize,
}

impl RorConfig {
    pub fn new(search_radius: f64, min_neighbors: usize) -> Result<Self, FilterError> {
        if !(search_radius > 0.0) {
            return Err(FilterError::InvalidConfig("search_radius must be > 0".into()));
        }
        if min_neighbors < 1 {
            return Err(FilterError::InvalidConfig("min_neighbors must be >= 1".into()));
        }
        Ok(Self { search_radius, min_neighbors })
    }
}

/// Range-proportional radius parameters. The radius at range `r` is
/// `max(min_search_radius, radius_multiplier * r * delta_h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrorConfig {
    pub radius_multiplier: f64,
    pub min_search_radius: f64,
    pub min_neighbors: usize,
}

impl Default for DrorConfig {
    fn default() -> Self {
        Self { radius_multiplier: 3.0, min_search_radius: 0.04, min_neighbors: 3 }
    }
}

impl DrorConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.radius_multiplier > 0.0) {
            return Err(FilterError::InvalidConfig("radius_multiplier must be > 0".into()));
        }
        if !(self.min_search_radius > 0.0) {
            return Err(FilterError::InvalidConfig("min_search_radius must be > 0".into()));
        }
        if self.min_neighbors < 1 {
            return Err(FilterError::InvalidConfig("min_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Search radius DROR uses for a point at the given range.
pub fn dror_search_radius(range: f64, cfg: &DrorConfig, sensor: &SensorConfig) -> f64 {
    (cfg.radius_multiplier * range * sensor.delta_h).max(cfg.min_search_radius)
}

fn coords(cloud: &[Point]) -> Vec<[f64; 3]> {
    cloud.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Label each point Noise when it has fewer than `min_neighbors` other
/// points within the fixed search radius.
pub fn ror(cloud: &[Point], cfg: &RorConfig) -> Vec<Label> {
    let points = coords(cloud);
    let tree = KdTree::build(points.clone());
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if tree.count_within(p, cfg.search_radius, i) < cfg.min_neighbors {
                Label::Noise
            } else {
                Label::Clean
            }
        })
        .collect()
}

/// Label each point Noise when it has fewer than `min_neighbors` other
/// points within its range-dependent search radius.
pub fn dror(cloud: &[Point], cfg: &DrorConfig, sensor: &SensorConfig) -> Vec<Label> {
    let points = coords(cloud);
    let tree = KdTree::build(points.clone());
    cloud
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let sr = dror_search_radius(range_of(p), cfg, sensor);
            if tree.count_within(points[i], sr, i) < cfg.min_neighbors {
                Label::Noise
            } else {
                Label::Clean
            }
        })
        .collect()
}

/// Run ROR on the cloud behind a range image and fold the per-point labels
/// back onto the pixel grid.
pub fn ror_on_image(
    img: &RangeImage,
    cfg: &RorConfig,
    sensor: &SensorConfig,
) -> Result<LabelMap, FilterError> {
    let cloud = unproject(img, sensor)?;
    Ok(labels_to_image(img, &ror(&cloud, cfg)))
}

/// Run DROR on the cloud behind a range image and fold the per-point labels
/// back onto the pixel grid.
pub fn dror_on_image(
    img: &RangeImage,
    cfg: &DrorConfig,
    sensor: &SensorConfig,
) -> Result<LabelMap, FilterError> {
    let cloud = unproject(img, sensor)?;
    Ok(labels_to_image(img, &dror(&cloud, cfg, sensor)))
}

/// Scatter per-point labels back onto pixels; relies on `unproject` emitting
/// one point per valid pixel in row-major order.
fn labels_to_image(img: &RangeImage, labels: &[Label]) -> LabelMap {
    let mut out = LabelMap::filled(img.rows, img.cols, Label::Invalid);
    let mut k = 0;
    for i in 0..img.range.len() {
        if img.valid[i] {
            out.values[i] = labels[k];
            k += 1;
        }
    }
    debug_assert_eq!(k, labels.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SensorConfig;
    use rand::prelude::*;
    use std::f64::consts::PI;

    fn sensor_512() -> SensorConfig {
        SensorConfig::with_linear_elevation(8, 2.0 * PI / 512.0, 200.0, -0.05, 0.05).unwrap()
    }

    /// O(n^2) reference for both filters.
    fn brute_labels(cloud: &[Point], radius_for: impl Fn(&Point) -> f64, min_neighbors: usize) -> Vec<Label> {
        cloud
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = radius_for(p);
                let n = cloud
                    .iter()
                    .enumerate()
                    .filter(|&(j, q)| {
                        i != j
                            && (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)
                                <= r * r
                    })
                    .count();
                if n < min_neighbors { Label::Noise } else { Label::Clean }
            })
            .collect()
    }

    fn random_cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point::new(
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-2.0..4.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0..8),
                )
            })
            .collect()
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut cloud: Vec<Point> = (0..20)
            .map(|i| Point::new(i as f64 * 0.05, 0.0, 0.0, 0.0, 0))
            .collect();
        cloud.push(Point::new(100.0, 100.0, 0.0, 0.0, 0));
        let cfg = RorConfig::new(1.0, 2).unwrap();
        let labels = ror(&cloud, &cfg);
        assert_eq!(labels[20], Label::Noise);
        assert_eq!(labels[0], Label::Clean);
    }

    #[test]
    fn single_point_cloud_is_noise() {
        let cfg = RorConfig::new(5.0, 1).unwrap();
        assert_eq!(ror(&[Point::new(1.0, 2.0, 3.0, 0.0, 0)], &cfg), vec![Label::Noise]);
    }

    #[test]
    fn dense_grid_interior_clean() {
        // 10x10 planar grid, 0.1 m pitch
        let mut cloud = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                cloud.push(Point::new(i as f64 * 0.1, j as f64 * 0.1, 0.0, 0.0, 0));
            }
        }
        let cfg = RorConfig::new(0.3, 2).unwrap();
        let labels = ror(&cloud, &cfg);
        let brute = brute_labels(&cloud, |_| 0.3, 2);
        assert_eq!(labels, brute);
        for i in 1..9 {
            for j in 1..9 {
                assert_eq!(labels[i * 10 + j], Label::Clean, "interior ({i},{j})");
            }
        }
    }

    #[test]
    fn ror_matches_brute_force() {
        let cloud = random_cloud(1500, 3);
        for &(r, k) in &[(0.5, 1), (2.0, 3), (5.0, 8)] {
            let cfg = RorConfig::new(r, k).unwrap();
            assert_eq!(ror(&cloud, &cfg), brute_labels(&cloud, |_| r, k));
        }
    }

    #[test]
    fn dror_matches_brute_force() {
        let cloud = random_cloud(1500, 4);
        let sensor = sensor_512();
        for &(gamma, srmin, k) in &[(3.0, 0.04, 3), (12.0, 0.5, 2)] {
            let cfg = DrorConfig {
                radius_multiplier: gamma,
                min_search_radius: srmin,
                min_neighbors: k,
            };
            let got = dror(&cloud, &cfg, &sensor);
            let want = brute_labels(&cloud, |p| dror_search_radius(range_of(p), &cfg, &sensor), k);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn dror_radius_clamps_at_zero_range() {
        let cfg = DrorConfig::default();
        let sensor = sensor_512();
        assert_eq!(dror_search_radius(0.0, &cfg, &sensor), cfg.min_search_radius);
    }

    #[test]
    fn dror_radius_nondecreasing_in_range() {
        let cfg = DrorConfig::default();
        let sensor = sensor_512();
        let mut last = 0.0;
        for i in 0..400 {
            let r = i as f64 * 0.5;
            let sr = dror_search_radius(r, &cfg, &sensor);
            assert!(sr >= last);
            last = sr;
        }
    }

    #[test]
    fn huge_multiplier_keeps_everything() {
        let cloud = random_cloud(100, 9);
        let sensor = sensor_512();
        let cfg = DrorConfig {
            radius_multiplier: 1e9,
            min_search_radius: 0.04,
            min_neighbors: 3,
        };
        // every point is far from the origin, so gamma*r*delta_h covers the cloud
        assert!(dror(&cloud, &cfg, &sensor).iter().all(|&l| l == Label::Clean));
    }

    #[test]
    fn radius_monotonicity_never_flips_clean_to_noise() {
        let cloud = random_cloud(400, 5);
        let radii = [0.5, 1.0, 2.0, 4.0, 8.0];
        let mut prev: Option<Vec<Label>> = None;
        for &r in &radii {
            let labels = ror(&cloud, &RorConfig::new(r, 3).unwrap());
            if let Some(prev) = &prev {
                for i in 0..labels.len() {
                    assert!(
                        !(prev[i] == Label::Clean && labels[i] == Label::Noise),
                        "radius increase flipped point {i} Clean -> Noise"
                    );
                }
            }
            prev = Some(labels);
        }
    }

    /// Two walls sampled at sensor angular resolution, near (10 m) and far
    /// (40 m). A fixed radius tuned for the near wall loses the far wall;
    /// the range-proportional radius keeps both.
    #[test]
    fn two_wall_scenario() {
        let sensor = sensor_512();
        let delta_h = sensor.delta_h;
        let mut cloud = Vec::new();
        let mut wall = |range: f64, az0: f64, n_az: usize, first: &mut usize| {
            *first = cloud.len();
            for row in 0..sensor.n_rows {
                let elev = sensor.elevations[row];
                for a in 0..n_az {
                    let az = az0 + a as f64 * delta_h;
                    let d = range * elev.cos();
                    cloud.push(Point::new(
                        d * az.cos(),
                        d * az.sin(),
                        range * elev.sin(),
                        0.5,
                        row as u16,
                    ));
                }
            }
        };
        let (mut near0, mut far0) = (0, 0);
        wall(10.0, 0.0, 24, &mut near0);
        wall(40.0, PI, 24, &mut far0);
        let n_wall = sensor.n_rows * 24;

        // vertical spacing at 10 m: elevation step ~0.0143 rad -> ~0.14 m;
        // horizontal ~0.12 m. Radius 0.35 covers the near wall lattice only.
        let ror_cfg = RorConfig::new(0.35, 3).unwrap();
        let ror_labels = ror(&cloud, &ror_cfg);
        assert!(
            ror_labels[near0..near0 + n_wall].iter().all(|&l| l == Label::Clean),
            "ROR should keep the near wall"
        );
        assert!(
            ror_labels[far0..far0 + n_wall].iter().all(|&l| l == Label::Noise),
            "ROR tuned at 10 m should lose the far wall"
        );

        let dror_cfg = DrorConfig { radius_multiplier: 3.0, min_search_radius: 0.35, min_neighbors: 3 };
        let dror_labels = dror(&cloud, &dror_cfg, &sensor);
        assert!(
            dror_labels.iter().all(|&l| l == Label::Clean),
            "DROR should keep both walls"
        );
    }

    #[test]
    fn image_filter_maps_back_to_pixels() {
        let sensor = sensor_512();
        let mut img = RangeImage::empty(sensor.n_rows, sensor.n_cols());
        // a tight cluster of valid pixels plus one isolated far pixel
        for u in 100..106 {
            for v in 2..6 {
                img.set_pixel(v, u, 10.0);
            }
        }
        img.set_pixel(0, 400, 80.0);
        let cfg = DrorConfig { radius_multiplier: 3.0, min_search_radius: 0.3, min_neighbors: 2 };
        let labels = dror_on_image(&img, &cfg, &sensor).unwrap();
        assert_eq!(labels.at(0, 400), Label::Noise);
        assert_eq!(labels.at(3, 102), Label::Clean);
        assert_eq!(labels.at(0, 0), Label::Invalid);
    }
}
