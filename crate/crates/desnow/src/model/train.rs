//! Joint training of the reconstructor and the difficulty net, with the
//! optional classification head in semi-supervised mode.
//!
//! Every step draws a batch of scans, an independent fresh blank mask per
//! scan, and an optional horizontal flip, then takes one Adam step on all
//! parameters through the shared loss. Fixed seed means a bit-identical
//! parameter trajectory.

use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blanking::{blank, sample_blank_mask};
use super::loss::{loss_self_mhl, loss_semi, loss_supervised};
use super::schedule::{schedule_weights, Schedule, Weights};
use super::{images_to_input, images_to_target, DesnowModel, ModelConfig, ModelError};
use crate::geom::{Label, LabelMap, RangeImage};
use crate::nn::tensor::Tensor;
use crate::nn::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    SelfSupervised,
    Semi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weighting schedule; only consulted in semi mode.
    pub schedule: Schedule,
    pub hypotheses: usize,
    pub blank_ratio: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub channels: usize,
    pub blocks: usize,
    pub encoder_blocks: usize,
    /// Meters per normalized range unit.
    pub range_scale: f64,
    pub flip_augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::SelfSupervised,
            schedule: Schedule::Smooth,
            hypotheses: 3,
            blank_ratio: 0.5,
            learning_rate: 3e-3,
            steps: 500,
            batch_size: 1,
            channels: 16,
            blocks: 4,
            encoder_blocks: 3,
            range_scale: 100.0,
            flip_augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, rows: usize, cols: usize) -> ModelConfig {
        ModelConfig {
            hypotheses: self.hypotheses,
            channels: self.channels,
            blocks: self.blocks,
            encoder_blocks: self.encoder_blocks,
            range_scale: self.range_scale,
            rows,
            cols,
            classifier: self.mode == TrainMode::Semi,
        }
    }
}

/// One training scan: the (noisy) observation, plus ground-truth labels for
/// the labeled fraction in semi-supervised mode.
#[derive(Debug, Clone)]
pub struct TrainScan {
    pub image: RangeImage,
    pub labels: Option<LabelMap>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss_self: f64,
    pub loss_sup: f64,
    pub w_self: f64,
    pub w_sup: f64,
}

pub struct TrainOutcome {
    pub model: DesnowModel,
    pub history: Vec<StepLog>,
}

/// Training log CSV: `step,loss_self,loss_sup,w_self,w_sup`.
pub fn write_history_csv(path: &Path, history: &[StepLog]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,loss_self,loss_sup,w_self,w_sup")?;
    for h in history {
        writeln!(w, "{},{},{},{},{}", h.step, h.loss_self, h.loss_sup, h.w_self, h.w_sup)?;
    }
    w.flush()
}

fn validate(scans: &[TrainScan], cfg: &TrainConfig) -> Result<(usize, usize), ModelError> {
    if scans.is_empty() {
        return Err(ModelError::Train("need at least one training scan".into()));
    }
    if !(cfg.blank_ratio > 0.0 && cfg.blank_ratio < 1.0) {
        return Err(ModelError::Train(format!(
            "blank ratio must be in (0, 1), got {}",
            cfg.blank_ratio
        )));
    }
    if cfg.batch_size < 1 || cfg.hypotheses < 1 || cfg.range_scale <= 0.0 {
        return Err(ModelError::Train("bad batch size, hypothesis count, or range scale".into()));
    }
    let (rows, cols) = (scans[0].image.rows, scans[0].image.cols);
    for (i, scan) in scans.iter().enumerate() {
        if scan.image.rows != rows || scan.image.cols != cols {
            return Err(ModelError::Train(format!("scan {i} shape differs from scan 0")));
        }
        if scan.image.n_valid() == 0 {
            return Err(ModelError::Train(format!("scan {i} has no valid pixels")));
        }
        if let Some(labels) = &scan.labels {
            if labels.rows != rows || labels.cols != cols {
                return Err(ModelError::Train(format!("scan {i} labels shape differs")));
            }
        }
    }
    Ok((rows, cols))
}

/// Train a model on the given scans. Deterministic per seed.
pub fn train(scans: &[TrainScan], cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    let (rows, cols) = validate(scans, cfg)?;
    let model = DesnowModel::new(cfg.model_config(rows, cols), cfg.seed);
    let params = model.params();
    let mut opt = Adam::new(&params, cfg.learning_rate);

    // separate stream from parameter init
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let plane = rows * cols;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let t = if cfg.steps <= 1 { 0.0 } else { step as f64 / (cfg.steps - 1) as f64 };
        let Weights { w_self, w_sup } = match cfg.mode {
            TrainMode::SelfSupervised => Weights { w_self: 1.0, w_sup: 0.0 },
            TrainMode::Semi => schedule_weights(cfg.schedule, t),
        };

        // assemble the batch: scan choice, flip, fresh blank mask
        let mut images = Vec::with_capacity(cfg.batch_size);
        let mut blanked = Vec::with_capacity(cfg.batch_size);
        let mut masks: Vec<bool> = Vec::with_capacity(cfg.batch_size * plane);
        let mut classes: Vec<u8> = vec![0; cfg.batch_size * plane];
        let mut labeled: Vec<bool> = vec![false; cfg.batch_size * plane];
        let mut any_labeled = false;
        for b in 0..cfg.batch_size {
            let idx = rng.random_range(0..scans.len());
            let flip = cfg.flip_augment && rng.random_bool(0.5);
            let blank_seed = rng.next_u64();
            let scan = &scans[idx];
            let image =
                if flip { scan.image.flipped_horizontal() } else { scan.image.clone() };
            let mask = sample_blank_mask(&image, cfg.blank_ratio, blank_seed);
            blanked.push(blank(&image, &mask));
            masks.extend_from_slice(&mask.mask);
            if cfg.mode == TrainMode::Semi {
                if let Some(labels) = &scan.labels {
                    let labels = if flip { labels.flipped_horizontal() } else { labels.clone() };
                    for i in 0..plane {
                        match labels.values[i] {
                            Label::Clean => {
                                labeled[b * plane + i] = true;
                                any_labeled = true;
                            }
                            Label::Noise => {
                                labeled[b * plane + i] = true;
                                classes[b * plane + i] = 1;
                                any_labeled = true;
                            }
                            Label::Invalid => {}
                        }
                    }
                }
            }
            images.push(image);
        }

        let image_refs: Vec<&RangeImage> = images.iter().collect();
        let blank_refs: Vec<&RangeImage> = blanked.iter().collect();
        let input_full = images_to_input(&image_refs, cfg.range_scale);
        let target = images_to_target(&image_refs, cfg.range_scale);

        Adam::zero_grad(&params);

        let zero = Tensor::from_values(&[1], vec![0.0]);
        let need_features = w_sup > 0.0 && any_labeled && model.classifier.is_some();
        let features = if w_self > 0.0 || need_features {
            Some(model.difficulty.encode(&input_full))
        } else {
            None
        };

        let self_loss = if w_self > 0.0 {
            let input_blanked = images_to_input(&blank_refs, cfg.range_scale);
            let preds = model.reconstructor.forward(&input_blanked);
            let phi = model.difficulty.decode(features.as_ref().unwrap());
            loss_self_mhl(&preds, &target, &phi, &masks).total
        } else {
            zero.clone()
        };

        let sup_loss = if need_features {
            let logits = model.classifier.as_ref().unwrap().forward(features.as_ref().unwrap());
            loss_supervised(&logits, &classes, &labeled)
        } else {
            zero
        };

        let total = loss_semi(&self_loss, &sup_loss, w_self, w_sup);
        let total_value = total.item();
        if !total_value.is_finite() {
            return Err(ModelError::Train(format!("non-finite loss at step {step}")));
        }
        total.backward();
        opt.step(&params);

        history.push(StepLog {
            step,
            loss_self: self_loss.item(),
            loss_sup: sup_loss.item(),
            w_self,
            w_sup,
        });
    }

    Ok(TrainOutcome { model, history })
}
