//! Random blanking: the self-supervision signal. A fresh mask is drawn per
//! training step so every pixel eventually serves as a reconstruction
//! target.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::geom::RangeImage;

/// Binary plane over pixels; true marks a blanked reconstruction target.
/// True only ever appears on valid pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlankMask {
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
}

impl BlankMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.rows {
            for u in 0..self.cols {
                out.mask[v * self.cols + u] = self.mask[v * self.cols + (self.cols - 1 - u)];
            }
        }
        out
    }
}

/// Uniformly pick `round(ratio * n_valid)` valid pixels without
/// replacement. Deterministic per seed.
pub fn sample_blank_mask(img: &RangeImage, ratio: f64, seed: u64) -> BlankMask {
    assert!((0.0..=1.0).contains(&ratio), "blank ratio must be in [0, 1]");
    let mut valid_idx: Vec<u32> = (0..img.valid.len())
        .filter(|&i| img.valid[i])
        .map(|i| i as u32)
        .collect();
    let n_blank = ((ratio * valid_idx.len() as f64).round() as usize).min(valid_idx.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = valid_idx.len();
    for k in 0..n_blank {
        let j = rng.random_range(k..n);
        valid_idx.swap(k, j);
    }
    let mut mask = vec![false; img.valid.len()];
    for &i in &valid_idx[..n_blank] {
        mask[i as usize] = true;
    }
    BlankMask { rows: img.rows, cols: img.cols, mask }
}

/// Zero out the masked pixels: range 0, validity false. Everything else is
/// untouched.
pub fn blank(img: &RangeImage, mask: &BlankMask) -> RangeImage {
    assert_eq!(img.rows, mask.rows);
    assert_eq!(img.cols, mask.cols);
    let mut out = img.clone();
    for i in 0..mask.mask.len() {
        if mask.mask[i] {
            debug_assert!(img.valid[i], "mask selects an invalid pixel");
            out.range[i] = 0.0;
            out.valid[i] = false;
            if let Some(intensity) = &mut out.intensity {
                intensity[i] = 0.0;
            }
        }
    }
    out
}
