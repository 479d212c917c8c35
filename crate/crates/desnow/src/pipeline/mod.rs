//! Post-processing and evaluation: depth-debiasing percentile shift,
//! thresholding, metrics, dataset split/synthesis plumbing, and rendering.

pub mod dataset;
pub mod metrics;
pub mod render;
pub mod shift;
pub mod split;

pub use dataset::{
    load_all_scans, load_manifest, save_manifest, synthesize_dataset, DatasetParams, LoadedScan,
    Manifest, ScanRecord,
};
pub use metrics::{classify, evaluate, roc_auc, select_threshold, threshold_grid, Metrics};
pub use shift::{percentile_shift, shift_plane, ShiftConfig};
pub use split::{split_dataset, Split};

use thiserror::Error;

use crate::geom::Label;
use crate::model::{infer_difficulty, DesnowModel, ModelError, ScorePlane};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad split: {0}")]
    BadSplit(String),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    File(#[from] crate::geom::io::FileError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Difficulty scores for one scan, optionally depth-debiased.
pub fn score_scan(
    model: &DesnowModel,
    img: &crate::geom::RangeImage,
    shift: Option<&ShiftConfig>,
) -> Result<ScorePlane, ModelError> {
    let scores = infer_difficulty(model, img)?;
    Ok(match shift {
        Some(cfg) => shift_plane(&scores, img, cfg),
        None => scores,
    })
}

/// Pool `(score, is_noise)` pairs over all labeled valid pixels of the
/// given scans, in scan order then row-major pixel order.
pub fn pooled_scores(
    model: &DesnowModel,
    scans: &[&LoadedScan],
    shift: Option<&ShiftConfig>,
) -> Result<(Vec<f64>, Vec<bool>), PipelineError> {
    let mut scores = Vec::new();
    let mut is_noise = Vec::new();
    for scan in scans {
        let plane = score_scan(model, &scan.noisy, shift)?;
        for i in 0..plane.values.len() {
            if !plane.present[i] {
                continue;
            }
            match scan.labels.values[i] {
                Label::Noise => {
                    scores.push(plane.values[i]);
                    is_noise.push(true);
                }
                Label::Clean => {
                    scores.push(plane.values[i]);
                    is_noise.push(false);
                }
                Label::Invalid => {}
            }
        }
    }
    Ok((scores, is_noise))
}
