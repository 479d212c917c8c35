//! Point-wise evaluation with noise as the positive class: confusion
//! counts, IoU/precision/recall, threshold selection, and ROC-AUC.

use thiserror::Error;

use crate::geom::{Label, LabelMap};
use crate::model::ScorePlane;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label maps have different shapes")]
    ShapeMismatch,
    #[error("no valid pixels to evaluate")]
    NoValidPixels,
    #[error("validation set must contain both classes")]
    OneClassOnly,
    #[error("threshold grid is empty")]
    EmptyGrid,
}

/// Confusion counts for the Noise-positive task. Degenerate ratios
/// (vacuous denominators) report 1.0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Metrics {
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion counts over pixels valid in both maps.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap) -> Result<Metrics, MetricsError> {
    if pred.rows != gt.rows || pred.cols != gt.cols {
        return Err(MetricsError::ShapeMismatch);
    }
    let mut m = Metrics::default();
    let mut seen = 0u64;
    for (p, g) in pred.values.iter().zip(&gt.values) {
        match (p, g) {
            (Label::Invalid, _) | (_, Label::Invalid) => {}
            (Label::Noise, Label::Noise) => {
                m.tp += 1;
                seen += 1;
            }
            (Label::Noise, Label::Clean) => {
                m.fp += 1;
                seen += 1;
            }
            (Label::Clean, Label::Noise) => {
                m.fn_ += 1;
                seen += 1;
            }
            (Label::Clean, Label::Clean) => {
                m.tn += 1;
                seen += 1;
            }
        }
    }
    if seen == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    Ok(m)
}

/// Threshold a score plane: strictly greater scores become Noise, absent
/// pixels stay Invalid.
pub fn classify(scores: &ScorePlane, threshold: f64) -> LabelMap {
    assert!(!threshold.is_nan(), "threshold must not be NaN");
    let mut out = LabelMap::filled(scores.rows, scores.cols, Label::Invalid);
    for i in 0..scores.values.len() {
        if scores.present[i] {
            out.values[i] =
                if scores.values[i] > threshold { Label::Noise } else { Label::Clean };
        }
    }
    out
}

fn counts_at(scores: &[f64], is_noise: &[bool], threshold: f64) -> Metrics {
    let mut m = Metrics::default();
    for (&s, &noise) in scores.iter().zip(is_noise) {
        match (s > threshold, noise) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    m
}

/// Grid-search the threshold that maximizes IoU on pooled validation
/// scores; ties go to the lower threshold. Requires both classes.
pub fn select_threshold(
    scores: &[f64],
    is_noise: &[bool],
    grid: &[f64],
) -> Result<f64, MetricsError> {
    assert_eq!(scores.len(), is_noise.len());
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    let n_noise = is_noise.iter().filter(|&&n| n).count();
    if n_noise == 0 || n_noise == is_noise.len() {
        return Err(MetricsError::OneClassOnly);
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &t in grid {
        let iou = counts_at(scores, is_noise, t).iou();
        if iou > best.0 {
            best = (iou, t);
        }
    }
    Ok(best.1)
}

/// Evenly spaced candidate thresholds spanning the scores.
pub fn threshold_grid(scores: &[f64], n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() || lo == hi || n == 1 {
        return vec![if lo.is_finite() { lo } else { 0.0 }];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Rank-based ROC-AUC of scores for the noise class, ties handled by
/// mid-ranks. Returns 0.5 when a class is missing.
pub fn roc_auc(scores: &[f64], is_noise: &[bool]) -> f64 {
    assert_eq!(scores.len(), is_noise.len());
    let n_pos = is_noise.iter().filter(|&&n| n).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores must be comparable"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based mid-rank for the tie group [i, j]
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if is_noise[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn metric_formulas() {
        let m = Metrics { tp: 2, fp: 1, fn_: 1, tn: 10 };
        assert_relative_eq!(m.iou(), 0.5);
        assert_relative_eq!(m.precision(), 2.0 / 3.0);
        assert_relative_eq!(m.recall(), 2.0 / 3.0);
    }

    #[test]
    fn evaluate_counts_and_skips_invalid() {
        let mut pred = LabelMap::filled(1, 6, Label::Clean);
        let mut gt = LabelMap::filled(1, 6, Label::Clean);
        pred.set(0, 0, Label::Noise);
        gt.set(0, 0, Label::Noise); // tp
        pred.set(0, 1, Label::Noise); // fp
        gt.set(0, 2, Label::Noise); // fn
        pred.set(0, 3, Label::Invalid);
        gt.set(0, 3, Label::Invalid);
        let m = evaluate(&pred, &gt).unwrap();
        assert_eq!(m, Metrics { tp: 1, fp: 1, fn_: 1, tn: 2 });
    }

    #[test]
    fn perfect_prediction_iou_one() {
        let mut gt = LabelMap::filled(2, 4, Label::Clean);
        gt.set(0, 1, Label::Noise);
        gt.set(1, 2, Label::Noise);
        let m = evaluate(&gt.clone(), &gt).unwrap();
        assert_eq!(m.iou(), 1.0);
    }

    #[test]
    fn all_clean_prediction_zero_iou_zero_recall() {
        let pred = LabelMap::filled(1, 4, Label::Clean);
        let mut gt = LabelMap::filled(1, 4, Label::Clean);
        gt.set(0, 0, Label::Noise);
        let m = evaluate(&pred, &gt).unwrap();
        assert_eq!(m.iou(), 0.0);
        assert_eq!(m.recall(), 0.0);
    }

    #[test]
    fn evaluate_errors() {
        let a = LabelMap::filled(1, 4, Label::Invalid);
        assert!(matches!(evaluate(&a, &a), Err(MetricsError::NoValidPixels)));
        let b = LabelMap::filled(2, 4, Label::Clean);
        assert!(matches!(evaluate(&a, &b), Err(MetricsError::ShapeMismatch)));
    }

    #[test]
    fn classify_threshold_edges() {
        let scores = ScorePlane {
            rows: 1,
            cols: 3,
            values: vec![3.0, 2.0, 0.0],
            present: vec![true, true, false],
        };
        let labels = classify(&scores, 2.9);
        assert_eq!(labels.values, vec![Label::Noise, Label::Clean, Label::Invalid]);
        let all_clean = classify(&scores, f64::INFINITY);
        assert_eq!(all_clean.count(Label::Noise), 0);
        let all_noise = classify(&scores, f64::NEG_INFINITY);
        assert_eq!(all_noise.count(Label::Noise), 2);
    }

    #[test]
    fn select_threshold_separable() {
        let scores = [-2.0, -1.0, -0.5, 1.5, 2.0];
        let labels = [false, false, false, true, true];
        let grid: Vec<f64> = (0..21).map(|i| -2.5 + i as f64 * 0.25).collect();
        let t = select_threshold(&scores, &labels, &grid).unwrap();
        // lowest grid value with perfect separation: -0.5 (strictly-greater rule)
        assert_relative_eq!(t, -0.5);
        let m = counts_at(&scores, &labels, t);
        assert_eq!(m.iou(), 1.0);
    }

    #[test]
    fn select_threshold_all_identical_scores() {
        let scores = [1.0; 10];
        let mut labels = [false; 10];
        labels[0] = true;
        labels[1] = true;
        // below 1.0 everything is noise -> IoU = prevalence; above -> 0
        let t = select_threshold(&scores, &labels, &[0.5, 1.5]).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn select_threshold_single_grid_value() {
        let scores = [0.0, 1.0];
        let labels = [false, true];
        assert_eq!(select_threshold(&scores, &labels, &[0.3]).unwrap(), 0.3);
    }

    #[test]
    fn select_threshold_requires_both_classes() {
        let scores = [0.0, 1.0];
        assert!(select_threshold(&scores, &[false, false], &[0.5]).is_err());
    }

    #[test]
    fn auc_extremes_and_ties() {
        assert_relative_eq!(roc_auc(&[0.1, 0.9], &[false, true]), 1.0);
        assert_relative_eq!(roc_auc(&[0.9, 0.1], &[false, true]), 0.0);
        assert_relative_eq!(roc_auc(&[0.5, 0.5], &[false, true]), 0.5);
        // mixed with ties: hand-computed mid-rank result
        let scores = [1.0, 2.0, 2.0, 3.0];
        let labels = [false, false, true, true];
        // ranks: 1, 2.5, 2.5, 4 -> U = (2.5 + 4) - 3 = 3.5 ; AUC = 3.5/4
        assert_relative_eq!(roc_auc(&scores, &labels), 3.5 / 4.0);
    }

    #[test]
    fn threshold_monotonicity_counts() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..500).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<bool> = (0..500).map(|_| rng.random_bool(0.2)).collect();
        let grid = threshold_grid(&scores, 41);
        let mut last: Option<Metrics> = None;
        for &t in &grid {
            let m = counts_at(&scores, &labels, t);
            if let Some(prev) = last {
                assert!(m.tp <= prev.tp, "raising threshold increased TP");
                assert!(m.fp <= prev.fp, "raising threshold increased FP");
            }
            last = Some(m);
        }
    }
}
