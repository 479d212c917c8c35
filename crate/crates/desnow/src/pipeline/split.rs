//! Deterministic train/val/test split by shuffled indices.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` and cut it at `round(r * n)` boundaries. Disjoint and
/// exhaustive; deterministic per seed. Any nonzero ratio that would
/// receive zero scans is an error.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Split, PipelineError> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(PipelineError::BadSplit("ratios must be nonnegative".into()));
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(PipelineError::BadSplit("ratios must sum to 1".into()));
    }
    let n_train = (r_train * n as f64).round() as usize;
    let n_val = (r_val * n as f64).round() as usize;
    if n_train + n_val > n {
        return Err(PipelineError::BadSplit("rounding exceeded the scan count".into()));
    }
    let n_test = n - n_train - n_val;
    for (r, c) in [(r_train, n_train), (r_val, n_val), (r_test, n_test)] {
        if r > 0.0 && c == 0 {
            return Err(PipelineError::BadSplit(format!(
                "{n} scans are too few for ratio {r}"
            )));
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in (1..n).rev() {
        let j = rng.random_range(0..=k);
        idx.swap(k, j);
    }
    let test = idx.split_off(n_train + n_val);
    let mut split = Split { train: idx, val: Vec::new(), test };
    split.val = split.train.split_off(n_train);
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_70_15_15() {
        let s = split_dataset(100, (0.7, 0.15, 0.15), 3).unwrap();
        assert_eq!(s.train.len(), 70);
        assert_eq!(s.val.len(), 15);
        assert_eq!(s.test.len(), 15);
        let mut all: Vec<usize> =
            s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn all_train() {
        let s = split_dataset(10, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(s.val.is_empty());
        assert!(s.test.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset(50, (0.7, 0.15, 0.15), 9).unwrap();
        let b = split_dataset(50, (0.7, 0.15, 0.15), 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(50, (0.7, 0.15, 0.15), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_scans_rejected() {
        assert!(split_dataset(2, (0.7, 0.15, 0.15), 0).is_err());
        assert!(split_dataset(0, (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(split_dataset(10, (0.5, 0.2, 0.2), 0).is_err());
        assert!(split_dataset(10, (1.2, -0.1, -0.1), 0).is_err());
    }
}
