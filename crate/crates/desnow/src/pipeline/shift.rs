//! Depth-binned percentile shift.
//!
//! Reconstruction difficulty drifts upward with distance because far points
//! are sparser. Partitioning points into fixed-width depth bins and
//! subtracting each bin's low percentile removes that bias before a single
//! global threshold is applied.

use serde::{Deserialize, Serialize};

use crate::geom::RangeImage;
use crate::model::ScorePlane;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    /// Depth bin width in meters.
    pub bin_width: f64,
    /// Nearest-rank percentile subtracted per bin; 0 means the minimum.
    pub percentile: u8,
    /// Bins with fewer points borrow the shift of the nearest bin at or
    /// above this size (their own percentile would be noise).
    pub min_bin_points: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { bin_width: 1.0, percentile: 20, min_bin_points: 5 }
    }
}

/// Nearest-rank percentile of a sorted slice: the `ceil(p/100 * n)`-th
/// smallest value, clamped to the first.
fn nearest_rank(sorted: &[f64], percentile: u8) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((percentile as f64 / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Shift aligned `scores` down by their depth bin's percentile. `ranges`
/// gives each score's depth in meters.
pub fn percentile_shift(scores: &[f64], ranges: &[f64], cfg: &ShiftConfig) -> Vec<f64> {
    assert_eq!(scores.len(), ranges.len(), "scores and ranges must align");
    assert!(cfg.bin_width > 0.0, "bin width must be positive");
    assert!(cfg.percentile <= 100, "percentile must be in [0, 100]");
    if scores.is_empty() {
        return Vec::new();
    }

    // group point indices per bin, in input order
    let bin_of = |r: f64| (r / cfg.bin_width).floor() as i64;
    let mut bins: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &r) in ranges.iter().enumerate() {
        bins.entry(bin_of(r)).or_default().push(i);
    }

    // percentile of every nonempty bin; eligible bins have enough points
    let mut own_shift: std::collections::BTreeMap<i64, (f64, usize)> =
        std::collections::BTreeMap::new();
    for (&b, members) in &bins {
        let mut vals: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("scores must be comparable"));
        own_shift.insert(b, (nearest_rank(&vals, cfg.percentile), members.len()));
    }
    let eligible: Vec<(i64, f64)> = own_shift
        .iter()
        .filter(|(_, &(_, n))| n >= cfg.min_bin_points)
        .map(|(&b, &(s, _))| (b, s))
        .collect();

    let shift_for = |b: i64| -> f64 {
        let (own, n) = own_shift[&b];
        if n >= cfg.min_bin_points || eligible.is_empty() {
            return own;
        }
        // nearest eligible bin; ties toward the lower bin index
        let mut best = eligible[0];
        let mut best_d = (best.0 - b).abs();
        for &(eb, es) in &eligible[1..] {
            let d = (eb - b).abs();
            if d < best_d {
                best = (eb, es);
                best_d = d;
            }
        }
        best.1
    };

    let mut out = scores.to_vec();
    for (&b, members) in &bins {
        let s = shift_for(b);
        for &i in members {
            out[i] -= s;
        }
    }
    out
}

/// Shift a score plane using the scan's own ranges; absent pixels stay
/// absent.
pub fn shift_plane(scores: &ScorePlane, img: &RangeImage, cfg: &ShiftConfig) -> ScorePlane {
    assert_eq!(scores.rows, img.rows);
    assert_eq!(scores.cols, img.cols);
    let idx: Vec<usize> = (0..scores.values.len()).filter(|&i| scores.present[i]).collect();
    let vals: Vec<f64> = idx.iter().map(|&i| scores.values[i]).collect();
    let ranges: Vec<f64> = idx.iter().map(|&i| img.range[i]).collect();
    let shifted = percentile_shift(&vals, &ranges, cfg);
    let mut out = scores.clone();
    for (k, &i) in idx.iter().enumerate() {
        out.values[i] = shifted[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_p20_of_five() {
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ranges = [10.1, 10.2, 10.3, 10.4, 10.5]; // one bin
        let out = percentile_shift(&scores, &ranges, &ShiftConfig::default());
        assert_eq!(out, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_scores_shift_to_zero() {
        let scores = [3.25; 7];
        let ranges = [5.0, 5.1, 5.2, 5.3, 5.5, 5.7, 5.9];
        let out = percentile_shift(&scores, &ranges, &ShiftConfig::default());
        assert!(out.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn percentile_zero_is_the_minimum() {
        let cfg = ShiftConfig { percentile: 0, ..ShiftConfig::default() };
        let scores = [4.0, 1.5, 2.0, 9.0, 3.0];
        let ranges = [20.2; 5];
        let out = percentile_shift(&scores, &ranges, &cfg);
        assert_eq!(out, vec![2.5, 0.0, 0.5, 7.5, 1.5]);
        assert_eq!(out.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
    }

    #[test]
    fn bins_shift_independently() {
        // two bins with different percentile levels
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let mut ranges = [1.5; 10];
        for r in ranges.iter_mut().skip(5) {
            *r = 7.5;
        }
        let out = percentile_shift(&scores, &ranges, &ShiftConfig::default());
        assert_eq!(&out[..5], &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&out[5..], &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sparse_bin_inherits_nearest_eligible_shift() {
        // bin 1 has 5 points (shift = 10), bin 7 has 2 points
        let scores = [10.0, 11.0, 12.0, 13.0, 14.0, 50.0, 60.0];
        let ranges = [1.1, 1.2, 1.3, 1.4, 1.5, 7.2, 7.4];
        let out = percentile_shift(&scores, &ranges, &ShiftConfig::default());
        assert_eq!(&out[5..], &[40.0, 50.0]);
    }

    #[test]
    fn no_eligible_bins_fall_back_to_own_percentile() {
        let scores = [5.0, 9.0, 100.0];
        let ranges = [1.0, 1.3, 50.0];
        let out = percentile_shift(&scores, &ranges, &ShiftConfig::default());
        // both bins use their own p20 (first element after sort)
        assert_eq!(out, vec![0.0, 4.0, 0.0]);
    }

    #[test]
    fn p20_property_on_random_draws() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.random_range(5..400);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..8.0)).collect();
            let ranges: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
            let cfg = ShiftConfig::default();
            let out = percentile_shift(&scores, &ranges, &cfg);
            // per eligible bin: p20 of shifted values is 0 and strictly
            // negative fraction is < 20%
            let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
            for (i, &r) in ranges.iter().enumerate() {
                bins.entry((r / cfg.bin_width).floor() as i64).or_default().push(out[i]);
            }
            for (_, mut vals) in bins {
                if vals.len() < cfg.min_bin_points {
                    continue;
                }
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let neg = vals.iter().filter(|&&v| v < 0.0).count();
                assert!((neg as f64) < 0.2 * vals.len() as f64);
                assert_eq!(nearest_rank(&vals, 20), 0.0);
            }
        }
    }
}
