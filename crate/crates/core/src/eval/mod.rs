//! Evaluation harness: the classification metrics, loss normalization for
//! cross-model comparison, an MMD estimator for domain-gap diagnostics, and
//! CSV/plot emission.
//!
//! AP here is per-class precision TP/(TP+FP) and mAP its mean over classes —
//! the definition used for these comparisons, not the IoU/recall-integrated
//! AP of detection benchmarks.

mod mmd;
mod plot;
mod report;

pub use mmd::mmd_estimate;
pub use plot::plot_loss_curves;
pub use report::{
    emit_comparison, emit_confusion_csv, export_loss_curve_csv, export_predictions,
    import_loss_curves, import_predictions, ComparisonRow,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("EmptyInput: no prediction records")]
    EmptyInput,
    #[error("UnknownClassLabel: '{0}' not in the label vocabulary")]
    UnknownClassLabel(String),
    #[error("UndefinedAP: class '{0}' was never predicted")]
    UndefinedAP(String),
    #[error("NoDefinedAP: no class has a defined average precision")]
    NoDefinedAP,
    #[error("InvalidArchitectureParams: C={c}, nl={nl}")]
    InvalidArchitectureParams { c: u32, nl: u32 },
    #[error("DimensionMismatch: feature dims {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("InsufficientSamples: the unbiased estimator needs at least 2 samples per set")]
    InsufficientSamples,
    #[error("MalformedImport: {path}: {reason}")]
    MalformedImport { path: PathBuf, reason: String },
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One model prediction on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub true_class: String,
    pub predicted_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Per-class TP/FP/FN tallies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassCounts {
    counts: BTreeMap<String, Counts>,
    total: usize,
}

impl ClassCounts {
    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(|s| s.as_str())
    }

    pub fn get(&self, class: &str) -> Counts {
        self.counts.get(class).copied().unwrap_or_default()
    }

    pub fn total_records(&self) -> usize {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Counts)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Tally confusion counts with the vocabulary taken as the union of true and
/// predicted classes.
pub fn confusion(records: &[PredictionRecord]) -> Result<ClassCounts, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut vocab: Vec<String> = records
        .iter()
        .flat_map(|r| [r.true_class.clone(), r.predicted_class.clone()])
        .collect();
    vocab.sort();
    vocab.dedup();
    confusion_with_vocab(records, &vocab)
}

/// Tally confusion counts against an explicit label vocabulary.
pub fn confusion_with_vocab(
    records: &[PredictionRecord],
    vocab: &[String],
) -> Result<ClassCounts, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts: BTreeMap<String, Counts> = vocab
        .iter()
        .map(|c| (c.clone(), Counts::default()))
        .collect();
    for r in records {
        if !counts.contains_key(&r.true_class) {
            return Err(EvalError::UnknownClassLabel(r.true_class.clone()));
        }
        if !counts.contains_key(&r.predicted_class) {
            return Err(EvalError::UnknownClassLabel(r.predicted_class.clone()));
        }
        if r.true_class == r.predicted_class {
            counts.get_mut(&r.true_class).unwrap().tp += 1;
        } else {
            counts.get_mut(&r.predicted_class).unwrap().fp += 1;
            counts.get_mut(&r.true_class).unwrap().fn_ += 1;
        }
    }
    Ok(ClassCounts {
        counts,
        total: records.len(),
    })
}

/// Per-class precision TP/(TP+FP); undefined when the class was never
/// predicted.
pub fn average_precision(counts: &ClassCounts, class: &str) -> Result<f64, EvalError> {
    let c = counts.get(class);
    if c.tp + c.fp == 0 {
        return Err(EvalError::UndefinedAP(class.to_string()));
    }
    Ok(c.tp as f64 / (c.tp + c.fp) as f64)
}

/// Mean of the defined per-class APs; classes with undefined AP are excluded
/// with a warning and reported back to the caller.
pub fn mean_ap(counts: &ClassCounts) -> Result<(f64, Vec<String>), EvalError> {
    let mut defined = Vec::new();
    let mut excluded = Vec::new();
    for class in counts.classes() {
        match average_precision(counts, class) {
            Ok(ap) => defined.push(ap),
            Err(EvalError::UndefinedAP(name)) => excluded.push(name),
            Err(e) => return Err(e),
        }
    }
    if defined.is_empty() {
        return Err(EvalError::NoDefinedAP);
    }
    for name in &excluded {
        log::warn!("class '{name}' has undefined AP (never predicted); excluded from mAP");
    }
    Ok((defined.iter().sum::<f64>() / defined.len() as f64, excluded))
}

/// Fraction of records whose prediction matches the label.
pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let correct = records
        .iter()
        .filter(|r| r.true_class == r.predicted_class)
        .count();
    Ok(correct as f64 / records.len() as f64)
}

/// The comparison scale factor `alpha = C/80 * 3/nl`.
pub fn loss_alpha(c: u32, nl: u32) -> Result<f64, EvalError> {
    if c < 1 || nl < 1 {
        return Err(EvalError::InvalidArchitectureParams { c, nl });
    }
    Ok((c as f64 / 80.0) * (3.0 / nl as f64))
}

/// Place an architecture-scaled classification loss on the common scale by
/// dividing out alpha.
pub fn normalize_loss(raw_loss: f64, c: u32, nl: u32) -> Result<f64, EvalError> {
    Ok(raw_loss / loss_alpha(c, nl)?)
}

/// A per-epoch classification-loss trace for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub model_id: String,
    pub class_count: u32,
    pub layer_count: u32,
    pub epochs: Vec<u32>,
    pub losses: Vec<f64>,
    /// True once the values are on the comparable scale.
    pub normalized: bool,
}

impl LossCurve {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.epochs.len() != self.losses.len() || self.epochs.is_empty() {
            return Err(EvalError::MalformedImport {
                path: self.model_id.clone().into(),
                reason: "epoch/loss length mismatch or empty curve".into(),
            });
        }
        if self.epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EvalError::MalformedImport {
                path: self.model_id.clone().into(),
                reason: "epochs must be strictly increasing".into(),
            });
        }
        Ok(())
    }

    /// Divide the raw losses by alpha unless already normalized.
    pub fn normalized_curve(&self) -> Result<LossCurve, EvalError> {
        if self.normalized {
            return Ok(self.clone());
        }
        let alpha = loss_alpha(self.class_count, self.layer_count)?;
        Ok(LossCurve {
            losses: self.losses.iter().map(|l| l / alpha).collect(),
            normalized: true,
            ..self.clone()
        })
    }

    pub fn alpha(&self) -> Result<f64, EvalError> {
        loss_alpha(self.class_count, self.layer_count)
    }
}
