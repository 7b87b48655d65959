//! Dish segmentation and background removal.
//!
//! A pluggable [`SegmentationBackend`] produces binary masks of satellite
//! dishes. Two backends ship with the crate: an oracle that replays
//! ground-truth annotation files (the reference for every correctness
//! obligation in this module) and a lightweight trainable per-pixel logistic
//! model fine-tuned under the weighted composite loss
//! `w_cls * L_cls + w_box * L_box + w_mask * L_mask` with default weights
//! (1, 1.5, 6.125). Heavier mask heads can be plugged in behind the same
//! trait and checkpoint scheme.

mod annotations;
mod logistic;
mod oracle;

pub use annotations::{
    rasterize_polygon, AnnotatedImage, AnnotatedObject, AnnotationRecord, AnnotationSet,
};
pub use logistic::LogisticBackend;
pub use oracle::OracleBackend;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{BinaryMask, Channels, Image, ImagingError};

#[derive(Debug, Error)]
pub enum SegmenterError {
    #[error("BackendNotTrainable: backend '{0}' cannot be fine-tuned")]
    BackendNotTrainable(String),
    #[error("EmptyDataset: no annotated images supplied")]
    EmptyDataset,
    #[error("CheckpointMissing: {path}: {reason}")]
    CheckpointMissing { path: PathBuf, reason: String },
    #[error("NoDetection: no object of interest found; skip and log the image")]
    NoDetection,
    #[error("EmptyMask: mask has no set pixels")]
    EmptyMask,
    #[error("DimensionMismatch: image {image_w}x{image_h} vs mask {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("AnnotationParse: {path}: {reason}")]
    AnnotationParse { path: PathBuf, reason: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Weights of the composite fine-tuning loss. Defaults follow the YOLACT
/// recipe: classification 1, box regression 1.5, mask 6.125.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            box_: 1.5,
            mask: 6.125,
        }
    }
}

/// Per-component losses reported by a training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub mask: f64,
}

/// Weighted total of the component losses.
pub fn composite_loss(components: LossComponents, weights: LossWeights) -> f64 {
    weights.cls * components.cls + weights.box_ * components.box_ + weights.mask * components.mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub loss_weights: LossWeights,
    pub learning_rate: f64,
    /// Training budget in iterations. The published recipe ran 30,000.
    pub iterations: u32,
    /// Detections below this confidence are dropped from results.
    pub confidence_threshold: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            loss_weights: LossWeights::default(),
            learning_rate: 2e-3,
            iterations: 30_000,
            confidence_threshold: 0.5,
        }
    }
}

/// One detected object: a full-frame mask plus a confidence score.
#[derive(Debug, Clone)]
pub struct Detection {
    pub mask: BinaryMask,
    pub confidence: f64,
    pub label: String,
}

/// Detections for one image, kept sorted by descending confidence.
#[derive(Debug, Clone, Default)]
pub struct SegmentationResult {
    detections: Vec<Detection>,
}

impl SegmentationResult {
    pub fn new(mut detections: Vec<Detection>) -> Self {
        detections.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Self { detections }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Opaque reference to persisted backend weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub backend: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl Checkpoint {
    /// Record a checkpoint file, hashing its current content.
    pub fn describe(backend: &str, path: &Path) -> Result<Self, SegmenterError> {
        let bytes = std::fs::read(path).map_err(|e| SegmenterError::CheckpointMissing {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            backend: backend.to_string(),
            path: path.to_path_buf(),
            sha256: hex_digest(&bytes),
        })
    }

    /// Read the checkpoint bytes, verifying the recorded content hash.
    pub fn read_verified(&self) -> Result<Vec<u8>, SegmenterError> {
        let bytes = std::fs::read(&self.path).map_err(|e| SegmenterError::CheckpointMissing {
            path: self.path.clone(),
            reason: e.to_string(),
        })?;
        let digest = hex_digest(&bytes);
        if digest != self.sha256 {
            return Err(SegmenterError::CheckpointMissing {
                path: self.path.clone(),
                reason: format!(
                    "content hash mismatch: expected {}, got {digest}",
                    self.sha256
                ),
            });
        }
        Ok(bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// One point of the composite-loss trace emitted during fine-tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossTracePoint {
    pub iteration: u32,
    pub cls: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub mask: f64,
    pub total: f64,
}

/// Outcome of a fine-tuning run.
#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub checkpoint: Checkpoint,
    pub trace: Vec<LossTracePoint>,
    pub final_loss: f64,
}

/// A mask-producing model. `segment` must be safe under concurrent callers
/// once the checkpoint exists; `finetune` assumes exclusive access.
pub trait SegmentationBackend {
    fn id(&self) -> &'static str;

    fn is_trainable(&self) -> bool;

    /// Fine-tune on the annotated dataset under the composite loss and
    /// persist a checkpoint under `out_dir`.
    fn finetune(
        &mut self,
        dataset: &AnnotationSet,
        cfg: &SegmenterConfig,
        out_dir: &Path,
    ) -> Result<FinetuneReport, SegmenterError>;

    /// Detect dishes in one image using the given checkpoint.
    fn segment(
        &self,
        checkpoint: &Checkpoint,
        img: &Image,
        cfg: &SegmenterConfig,
    ) -> Result<SegmentationResult, SegmenterError>;
}

/// Fine-tune a backend, rejecting backends that cannot train.
pub fn finetune(
    backend: &mut dyn SegmentationBackend,
    dataset: &AnnotationSet,
    cfg: &SegmenterConfig,
    out_dir: &Path,
) -> Result<FinetuneReport, SegmenterError> {
    if !backend.is_trainable() {
        return Err(SegmenterError::BackendNotTrainable(
            backend.id().to_string(),
        ));
    }
    if dataset.images().is_empty() {
        return Err(SegmenterError::EmptyDataset);
    }
    backend.finetune(dataset, cfg, out_dir)
}

/// Pick the object of interest: highest confidence, ties broken by larger
/// mask area, then by mask content so the choice is independent of detection
/// order.
pub fn select_object_of_interest(
    result: &SegmentationResult,
) -> Result<BinaryMask, SegmenterError> {
    result
        .detections()
        .iter()
        .max_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then_with(|| a.mask.popcount().cmp(&b.mask.popcount()))
                .then_with(|| a.mask.bits().cmp(b.mask.bits()).reverse())
        })
        .map(|d| d.mask.clone())
        .ok_or(SegmenterError::NoDetection)
}

/// What replaces pixels outside the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FillPolicy {
    /// Opaque black for RGB images, fully transparent for RGBA.
    Default,
    Black,
    /// Zero alpha; requires an RGBA input.
    Transparent,
    Solid([u8; 4]),
}

/// Keep pixels under the mask byte-identical and replace the rest with the
/// fill value.
pub fn remove_background(
    img: &Image,
    mask: &BinaryMask,
    fill: FillPolicy,
) -> Result<Image, SegmenterError> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(SegmenterError::DimensionMismatch {
            image_w: img.width(),
            image_h: img.height(),
            mask_w: mask.width(),
            mask_h: mask.height(),
        });
    }
    let fill_rgba = match (fill, img.channels()) {
        (FillPolicy::Default, Channels::Rgb) | (FillPolicy::Black, _) => [0, 0, 0, 255],
        (FillPolicy::Default, Channels::Rgba) | (FillPolicy::Transparent, Channels::Rgba) => {
            [0, 0, 0, 0]
        }
        (FillPolicy::Transparent, Channels::Rgb) => {
            return Err(SegmenterError::Imaging(ImagingError::ChannelMismatch {
                expected: 4,
                got: 3,
            }))
        }
        (FillPolicy::Solid(c), _) => c,
    };
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !mask.get(x, y) {
                out.set_pixel(x, y, fill_rgba);
            }
        }
    }
    Ok(out)
}

/// Crop to the mask's bounding box and attach the mask as the alpha channel.
pub fn extract_cutout(img: &Image, mask: &BinaryMask) -> Result<Image, SegmenterError> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(SegmenterError::DimensionMismatch {
            image_w: img.width(),
            image_h: img.height(),
            mask_w: mask.width(),
            mask_h: mask.height(),
        });
    }
    let (x0, y0, x1, y1) = mask.bounding_box().ok_or(SegmenterError::EmptyMask)?;
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut out = Image::new(w, h, Channels::Rgba)?;
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x0 + x, y0 + y);
            let a = if mask.get(x0 + x, y0 + y) { 255 } else { 0 };
            out.set_pixel(x, y, [p[0], p[1], p[2], a]);
        }
    }
    Ok(out)
}
