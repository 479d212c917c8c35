//! The de-snowing method itself: a K-hypothesis point reconstructor, a
//! reconstruction-difficulty regressor, random blanking, the shared
//! heteroscedastic loss, semi-supervised weighting schedules, and the
//! training loop.
//!
//! Both networks see two channels, normalized range (`r / range_scale`) and
//! validity. The reconstructor reads the blanked scan; the difficulty net
//! reads the original scan and learns to predict how badly the blanked
//! reconstruction will go at each pixel. Only the difficulty net runs at
//! inference.

pub mod blanking;
pub mod infer;
pub mod loss;
pub mod schedule;
pub mod train;

pub use blanking::{blank, sample_blank_mask, BlankMask};
pub use infer::{infer_classifier_labels, infer_difficulty, masked_reconstruction_error, ScorePlane};
pub use schedule::{schedule_weights, Schedule, Weights};
pub use train::{train, StepLog, TrainConfig, TrainMode, TrainOutcome, TrainScan};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::RangeImage;
use crate::nn::checkpoint::{self, ParamEntry, ParamPack};
use crate::nn::{Backbone, DecoderHead, Tensor};
use rand::SeedableRng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image is {rows}x{cols} but the model was trained at {expected_rows}x{expected_cols}")]
    ResolutionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("model has no classifier head")]
    NoClassifier,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training: {0}")]
    Train(String),
}

/// Architecture and normalization hyper-parameters, frozen into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// K reconstruction hypotheses emitted per pixel.
    pub hypotheses: usize,
    pub channels: usize,
    pub blocks: usize,
    /// Leading blocks (plus stem) forming the shared feature encoder.
    pub encoder_blocks: usize,
    /// Meters per normalized range unit.
    pub range_scale: f64,
    /// Training resolution; inference rejects other shapes.
    pub rows: usize,
    pub cols: usize,
    /// Whether a 2-logit classification head shares the difficulty encoder.
    pub classifier: bool,
}

/// Paired reconstruction and difficulty networks, plus the optional
/// classification head sharing the difficulty net's encoder.
pub struct DesnowModel {
    pub cfg: ModelConfig,
    pub seed: u64,
    pub reconstructor: Backbone,
    pub difficulty: Backbone,
    pub classifier: Option<DecoderHead>,
}

impl DesnowModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        assert!(cfg.hypotheses >= 1, "need at least one hypothesis");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reconstructor =
            Backbone::new(2, cfg.channels, cfg.blocks, cfg.encoder_blocks, cfg.hypotheses, &mut rng);
        let difficulty = Backbone::new(2, cfg.channels, cfg.blocks, cfg.encoder_blocks, 1, &mut rng);
        let classifier = cfg
            .classifier
            .then(|| DecoderHead::new(cfg.channels, cfg.blocks - cfg.encoder_blocks, 2, &mut rng));
        Self { cfg, seed, reconstructor, difficulty, classifier }
    }

    /// Every trainable tensor, in checkpoint order.
    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.reconstructor.named_params("recon");
        out.extend(self.difficulty.named_params("diff"));
        if let Some(cls) = &self.classifier {
            out.extend(cls.named_params("cls"));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path, step: u64) -> Result<(), ModelError> {
        let meta = serde_json::json!({
            "config": self.cfg,
            "seed": self.seed,
            "step": step,
        });
        let entries = self
            .named_params()
            .into_iter()
            .map(|(name, t)| ParamEntry { name, shape: t.shape(), values: t.values() })
            .collect();
        checkpoint::save_params(path, &ParamPack { meta, entries })
            .map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, u64), ModelError> {
        let pack = checkpoint::load_params(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let cfg: ModelConfig = serde_json::from_value(pack.meta["config"].clone())
            .map_err(|e| ModelError::Checkpoint(format!("bad config: {e}")))?;
        let seed = pack.meta["seed"].as_u64().unwrap_or(0);
        let step = pack.meta["step"].as_u64().unwrap_or(0);
        let model = Self::new(cfg, seed);
        let named = model.named_params();
        if named.len() != pack.entries.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, file has {}",
                named.len(),
                pack.entries.len()
            )));
        }
        for ((name, tensor), entry) in named.into_iter().zip(pack.entries) {
            if name != entry.name || tensor.shape() != entry.shape {
                return Err(ModelError::Checkpoint(format!(
                    "parameter mismatch: model {name} {:?} vs file {} {:?}",
                    tensor.shape(),
                    entry.name,
                    entry.shape
                )));
            }
            tensor.set_values(&entry.values);
        }
        Ok((model, step))
    }

    /// Sum of parameter values; a cheap fingerprint for determinism checks.
    pub fn param_checksum(&self) -> f64 {
        self.params().iter().map(|p| p.values().iter().sum::<f64>()).sum()
    }

    pub fn check_resolution(&self, img: &RangeImage) -> Result<(), ModelError> {
        if img.rows != self.cfg.rows || img.cols != self.cfg.cols {
            return Err(ModelError::ResolutionMismatch {
                expected_rows: self.cfg.rows,
                expected_cols: self.cfg.cols,
                rows: img.rows,
                cols: img.cols,
            });
        }
        Ok(())
    }
}

/// Stack scans into a `(B, 2, H, W)` input: normalized range and validity.
pub fn images_to_input(images: &[&RangeImage], range_scale: f64) -> Tensor {
    assert!(!images.is_empty());
    let (rows, cols) = (images[0].rows, images[0].cols);
    let plane = rows * cols;
    let mut data = vec![0.0; images.len() * 2 * plane];
    for (b, img) in images.iter().enumerate() {
        assert_eq!(img.rows, rows);
        assert_eq!(img.cols, cols);
        let base = b * 2 * plane;
        for i in 0..plane {
            if img.valid[i] {
                data[base + i] = img.range[i] / range_scale;
                data[base + plane + i] = 1.0;
            }
        }
    }
    Tensor::from_values(&[images.len(), 2, rows, cols], data)
}

/// Normalized range plane used as the reconstruction target, `(B, 1, H, W)`.
pub fn images_to_target(images: &[&RangeImage], range_scale: f64) -> Tensor {
    assert!(!images.is_empty());
    let (rows, cols) = (images[0].rows, images[0].cols);
    let plane = rows * cols;
    let mut data = vec![0.0; images.len() * plane];
    for (b, img) in images.iter().enumerate() {
        for i in 0..plane {
            if img.valid[i] {
                data[b * plane + i] = img.range[i] / range_scale;
            }
        }
    }
    Tensor::from_values(&[images.len(), 1, rows, cols], data)
}
