//! Transfer-learning classifier: a pre-trained backbone used as a frozen
//! feature extractor, with a two-layer fully connected head fine-tuned under
//! cross-entropy loss.
//!
//! Partial freezing is literal here: only the head has a training path, the
//! backbone's update rule is identically zero, and the weights manifest
//! (layer name, parameter count, content hash, trainable flag) lets external
//! tooling verify that backbone hashes never move across epochs.

mod backbone;
mod head;
mod train;
mod weights;

pub use backbone::{
    ensure_builtin_backbone, generate_builtin_backbone, Backbone, BUILTIN_BACKBONE_FILE,
    BUILTIN_BACKBONE_ID,
};
pub use head::{AdamState, Head, HIDDEN_UNITS};
pub use train::{train, EpochStats, TrainConfig, TrainingReport};
pub use weights::{LayerEntry, Tensor, TensorData, TensorFile, WeightsManifest};

use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::imaging::{Image, ImagingError};
use weights::tensor_sha256;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("MissingPretrainedWeights: {path}")]
    MissingPretrainedWeights { path: PathBuf },
    #[error("InvalidClassCount: {0} (need at least 2 classes)")]
    InvalidClassCount(usize),
    #[error("InvalidProbability: {0}")]
    InvalidProbability(String),
    #[error("EmptyManifest: {0}")]
    EmptyManifest(String),
    #[error("UnpreprocessedInput: {0}")]
    UnpreprocessedInput(String),
    #[error("BackboneNotFrozen: freeze_backbone must run before training")]
    BackboneNotFrozen,
    #[error("ModelNotLoaded: {path}: {reason}")]
    ModelNotLoaded { path: PathBuf, reason: String },
    #[error("WeightsParse: {path}: {reason}")]
    WeightsParse { path: PathBuf, reason: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Frozen feature extractor plus trainable FC head, with the portable
/// weights manifest used for freeze verification.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub backbone: Backbone,
    pub head: Head,
    /// Class labels in logit order; defaults to `class_<i>` until training
    /// binds dish conditions.
    pub labels: Vec<String>,
    backbone_trainable: bool,
}

impl ClassifierModel {
    pub fn class_count(&self) -> usize {
        self.head.class_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim
    }

    pub fn backbone_is_frozen(&self) -> bool {
        !self.backbone_trainable
    }

    pub(crate) fn set_backbone_trainable(&mut self, value: bool) {
        self.backbone_trainable = value;
    }

    /// Recompute the manifest from current weight bytes and flags.
    pub fn weights_manifest(&self) -> WeightsManifest {
        let mut entries = Vec::new();
        for stage in self.backbone.stages() {
            for tensor in [stage.weight_tensor(), stage.bias_tensor()] {
                entries.push(LayerEntry {
                    name: tensor.name.clone(),
                    parameter_count: tensor.data.len(),
                    sha256: tensor_sha256(&tensor),
                    trainable: self.backbone_trainable,
                });
            }
        }
        for tensor in self.head.tensors() {
            entries.push(LayerEntry {
                name: tensor.name.clone(),
                parameter_count: tensor.data.len(),
                sha256: tensor_sha256(&tensor),
                trainable: true,
            });
        }
        WeightsManifest { entries }
    }

    /// Persist head weights + metadata as the checkpoint blob and write the
    /// weights manifest next to it.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ClassifierError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ClassifierError::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        let tf = TensorFile {
            meta: serde_json::json!({
                "kind": "dishwatch-classifier",
                "labels": self.labels,
                "class_count": self.class_count(),
                "feature_dim": self.feature_dim(),
                "dropout": self.head.dropout,
                "backbone_id": self.backbone.id,
                "backbone_file": self.backbone.source_path.file_name().map(|s| s.to_string_lossy().to_string()),
                "backbone_sha256": self.backbone.source_sha256,
                "backbone_frozen": self.backbone_is_frozen(),
            }),
            tensors: self.head.tensors(),
        };
        tf.save(path)?;
        self.weights_manifest().save(&manifest_path_for(path))
    }

    /// Load a checkpoint, resolving the backbone weights file from
    /// `backbone_dir` and verifying its content hash.
    pub fn load_checkpoint(path: &Path, backbone_dir: &Path) -> Result<Self, ClassifierError> {
        let tf = TensorFile::load(path).map_err(|e| match e {
            ClassifierError::MissingPretrainedWeights { path } => ClassifierError::ModelNotLoaded {
                path,
                reason: "checkpoint file missing".to_string(),
            },
            other => other,
        })?;
        let meta = &tf.meta;
        let backbone_file = meta["backbone_file"]
            .as_str()
            .ok_or_else(|| ClassifierError::ModelNotLoaded {
                path: path.to_path_buf(),
                reason: "checkpoint lacks backbone_file".to_string(),
            })?
            .to_string();
        let backbone_path = backbone_dir.join(&backbone_file);
        let backbone = Backbone::load(&backbone_path)?;
        if let Some(expected) = meta["backbone_sha256"].as_str() {
            if expected != backbone.source_sha256 {
                return Err(ClassifierError::ModelNotLoaded {
                    path: path.to_path_buf(),
                    reason: format!(
                        "backbone hash mismatch: checkpoint expects {expected}, cache has {}",
                        backbone.source_sha256
                    ),
                });
            }
        }
        let dropout = meta["dropout"].as_f64().unwrap_or(0.5);
        let head = Head::from_tensors(|name| tf.get(name).cloned(), dropout)?;
        let labels = meta["labels"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|v| v.as_str().unwrap_or_default().to_string())
                    .collect()
            })
            .unwrap_or_else(|| default_labels(head.class_count()));
        let frozen = meta["backbone_frozen"].as_bool().unwrap_or(true);
        Ok(Self {
            backbone,
            head,
            labels,
            backbone_trainable: !frozen,
        })
    }
}

pub fn manifest_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("manifest.json")
}

fn default_labels(class_count: usize) -> Vec<String> {
    (0..class_count).map(|i| format!("class_{i}")).collect()
}

/// Assemble a model: load the pre-trained backbone and attach a freshly
/// initialized head producing `class_count` logits.
pub fn build_model(
    backbone_weights: &Path,
    class_count: usize,
    head_seed: u64,
) -> Result<ClassifierModel, ClassifierError> {
    if class_count < 2 {
        return Err(ClassifierError::InvalidClassCount(class_count));
    }
    let backbone = Backbone::load(backbone_weights)?;
    let head = Head::new(backbone.feature_dim, class_count, 0.5, head_seed);
    Ok(ClassifierModel {
        backbone,
        head,
        labels: default_labels(class_count),
        backbone_trainable: true,
    })
}

/// Zero the effective update of every backbone parameter: only the head
/// keeps a learning rate. Idempotent.
pub fn freeze_backbone(model: &mut ClassifierModel) {
    model.set_backbone_trainable(false);
}

/// Numerically stable softmax, in place.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

const CE_EPS: f64 = 1e-12;

/// Categorical cross-entropy of a predicted distribution against the true
/// class index. For two classes this reduces to the familiar binary form
/// `-[y ln p + (1-y) ln (1-p)]`.
pub fn cross_entropy(true_class: usize, probs: &[f64]) -> Result<f64, ClassifierError> {
    if true_class >= probs.len() {
        return Err(ClassifierError::InvalidProbability(format!(
            "class {true_class} out of range for {} probabilities",
            probs.len()
        )));
    }
    if probs
        .iter()
        .any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan())
    {
        return Err(ClassifierError::InvalidProbability(format!(
            "components must lie in [0,1]: {probs:?}"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ClassifierError::InvalidProbability(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(-probs[true_class].clamp(CE_EPS, 1.0 - CE_EPS).ln())
}

/// The binary form: `-[y ln p + (1-y) ln(1-p)]`.
pub fn binary_cross_entropy(y: f64, y_hat: f64) -> Result<f64, ClassifierError> {
    if !(0.0..=1.0).contains(&y_hat) || y_hat.is_nan() {
        return Err(ClassifierError::InvalidProbability(format!(
            "prediction {y_hat} outside [0,1]"
        )));
    }
    let p = y_hat.clamp(CE_EPS, 1.0 - CE_EPS);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Cross-entropy straight from logits; returns the loss and the softmax
/// probabilities.
pub fn softmax_cross_entropy(logits: &[f64], true_class: usize) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let loss = -probs[true_class].clamp(CE_EPS, 1.0 - CE_EPS).ln();
    (loss, probs)
}

/// Analytic gradient of [`softmax_cross_entropy`] with respect to the
/// logits: `softmax(z) - onehot(true_class)`.
pub fn softmax_cross_entropy_grad(logits: &[f64], true_class: usize) -> Vec<f64> {
    let mut grad = softmax(logits);
    grad[true_class] -= 1.0;
    grad
}

/// Class probabilities for one image. Evaluation mode: dropout disabled, so
/// identical inputs give identical vectors.
pub fn predict(model: &ClassifierModel, img: &Image) -> Result<Vec<f64>, ClassifierError> {
    let features = model.backbone.extract(img)?;
    let row: Vec<f64> = features.iter().map(|&v| v as f64).collect();
    let x = Array2::from_shape_vec((1, row.len()), row).expect("shape");
    let probs = model.head.forward_eval(&x);
    Ok(probs.row(0).to_vec())
}

/// The frozen backbone's embedding for one image (length `feature_dim`).
pub fn extract_features(model: &ClassifierModel, img: &Image) -> Result<Vec<f32>, ClassifierError> {
    model.backbone.extract(img)
}
