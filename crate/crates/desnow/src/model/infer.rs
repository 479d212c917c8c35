//! Inference: difficulty scores from the unblanked scan, classifier labels
//! in semi mode, and reconstruction-error probes for evaluation.

use super::blanking::{blank, BlankMask};
use super::loss::min_hypothesis_error;
use super::{images_to_input, images_to_target, DesnowModel, ModelError};
use crate::geom::{Label, LabelMap, RangeImage};

/// Per-pixel difficulty scores; `present` is false where the scan had no
/// return.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePlane {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

impl ScorePlane {
    pub fn at(&self, v: usize, u: usize) -> Option<f64> {
        let i = v * self.cols + u;
        self.present[i].then_some(self.values[i])
    }
}

/// Raw difficulty output on the unblanked image. Scores are absent at
/// invalid pixels; the image must match the training resolution.
pub fn infer_difficulty(model: &DesnowModel, img: &RangeImage) -> Result<ScorePlane, ModelError> {
    model.check_resolution(img)?;
    let input = images_to_input(&[img], model.cfg.range_scale);
    let phi = model.difficulty.forward(&input);
    let values = phi.values();
    Ok(ScorePlane {
        rows: img.rows,
        cols: img.cols,
        values: values
            .iter()
            .zip(&img.valid)
            .map(|(&s, &v)| if v { s } else { 0.0 })
            .collect(),
        present: img.valid.clone(),
    })
}

/// Argmax of the classification head over valid pixels (semi mode).
pub fn infer_classifier_labels(
    model: &DesnowModel,
    img: &RangeImage,
) -> Result<LabelMap, ModelError> {
    model.check_resolution(img)?;
    let classifier = model.classifier.as_ref().ok_or(ModelError::NoClassifier)?;
    let input = images_to_input(&[img], model.cfg.range_scale);
    let logits = classifier.forward(&model.difficulty.encode(&input));
    let v = logits.values();
    let plane = img.rows * img.cols;
    let mut out = LabelMap::filled(img.rows, img.cols, Label::Invalid);
    for i in 0..plane {
        if img.valid[i] {
            out.values[i] = if v[plane + i] > v[i] { Label::Noise } else { Label::Clean };
        }
    }
    Ok(out)
}

/// Mean winner-takes-all reconstruction error (normalized units) over the
/// masked pixels, using the model's own blanking of `img`.
pub fn masked_reconstruction_error(
    model: &DesnowModel,
    img: &RangeImage,
    mask: &BlankMask,
) -> Result<f64, ModelError> {
    let per_pixel = masked_reconstruction_errors(model, img, mask)?;
    let n = per_pixel.len().max(1);
    Ok(per_pixel.into_iter().sum::<f64>() / n as f64)
}

/// Winner-takes-all reconstruction error at each masked pixel, in mask
/// order (row-major over masked positions).
pub fn masked_reconstruction_errors(
    model: &DesnowModel,
    img: &RangeImage,
    mask: &BlankMask,
) -> Result<Vec<f64>, ModelError> {
    model.check_resolution(img)?;
    let blanked = blank(img, mask);
    let input = images_to_input(&[&blanked], model.cfg.range_scale);
    let target = images_to_target(&[img], model.cfg.range_scale);
    let preds = model.reconstructor.forward(&input);
    let (c, _) = min_hypothesis_error(&preds, &target);
    let cv = c.values();
    Ok((0..cv.len()).filter(|&i| mask.mask[i]).map(|i| cv[i]).collect())
}
