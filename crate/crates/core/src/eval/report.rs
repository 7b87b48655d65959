//! Import/export surfaces: prediction records as line-delimited JSON, loss
//! curves as CSV rows of (model_id, C, nl, epoch, raw_loss), and the
//! comparison/confusion tables. External baselines are never executed; they
//! enter through these files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassCounts, EvalError, LossCurve, PredictionRecord};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Write records as one JSON object per line.
pub fn export_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| EvalError::MalformedImport {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    Ok(())
}

/// Read line-delimited prediction records. When `class_order` is given and a
/// record carries probabilities, the predicted class must be their argmax.
pub fn import_predictions(
    path: &Path,
    class_order: Option<&[String]>,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| EvalError::MalformedImport {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })?;
        if let (Some(order), Some(probs)) = (class_order, record.probabilities.as_ref()) {
            if probs.len() != order.len() {
                return Err(EvalError::MalformedImport {
                    path: path.to_path_buf(),
                    reason: format!(
                        "line {}: {} probabilities for {} classes",
                        i + 1,
                        probs.len(),
                        order.len()
                    ),
                });
            }
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            if order[argmax] != record.predicted_class {
                return Err(EvalError::MalformedImport {
                    path: path.to_path_buf(),
                    reason: format!(
                        "line {}: predicted_class '{}' is not the argmax '{}'",
                        i + 1,
                        record.predicted_class,
                        order[argmax]
                    ),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct LossRow {
    model_id: String,
    #[serde(rename = "C")]
    c: u32,
    nl: u32,
    epoch: u32,
    raw_loss: f64,
}

/// Write curves in the loss-curve CSV exchange format.
pub fn export_loss_curve_csv(curves: &[LossCurve], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::MalformedImport {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for curve in curves {
        for (&epoch, &raw_loss) in curve.epochs.iter().zip(curve.losses.iter()) {
            w.serialize(LossRow {
                model_id: curve.model_id.clone(),
                c: curve.class_count,
                nl: curve.layer_count,
                epoch,
                raw_loss,
            })
            .map_err(|e| EvalError::MalformedImport {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read loss-curve CSV rows, grouping by model id in file order. Raw curves
/// come back with `normalized = false`.
pub fn import_loss_curves(path: &Path) -> Result<Vec<LossCurve>, EvalError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| EvalError::MalformedImport {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut curves: Vec<LossCurve> = Vec::new();
    for row in reader.deserialize::<LossRow>() {
        let row = row.map_err(|e| EvalError::MalformedImport {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        match curves.iter_mut().find(|c| c.model_id == row.model_id) {
            Some(curve) => {
                if curve.class_count != row.c || curve.layer_count != row.nl {
                    return Err(EvalError::MalformedImport {
                        path: path.to_path_buf(),
                        reason: format!("model '{}' changes C/nl mid-file", row.model_id),
                    });
                }
                curve.epochs.push(row.epoch);
                curve.losses.push(row.raw_loss);
            }
            None => curves.push(LossCurve {
                model_id: row.model_id,
                class_count: row.c,
                layer_count: row.nl,
                epochs: vec![row.epoch],
                losses: vec![row.raw_loss],
                normalized: false,
            }),
        }
    }
    for curve in &curves {
        curve.validate()?;
    }
    Ok(curves)
}

/// One row of the comparison table. `training_images` is unknown for
/// imported baselines unless their import states it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub training_images: Option<usize>,
    /// Mean average precision in `[0, 1]`.
    pub map: f64,
    pub accuracy: f64,
}

/// Write the (model, training_images, mAP, accuracy) table.
pub fn emit_comparison(rows: &[ComparisonRow], path: &Path) -> Result<(), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::MalformedImport {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    w.write_record(["model", "training_images", "mAP", "accuracy"])
        .map_err(|e| EvalError::MalformedImport {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.training_images.map(|n| n.to_string()).unwrap_or_default(),
            format!("{:.4}", r.map),
            format!("{:.4}", r.accuracy),
        ])
        .map_err(|e| EvalError::MalformedImport {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Write per-class confusion counts as CSV.
pub fn emit_confusion_csv(counts: &ClassCounts, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::MalformedImport {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    w.write_record(["class", "tp", "fp", "fn"])
        .map_err(|e| EvalError::MalformedImport {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    for (class, c) in counts.iter() {
        w.write_record([
            class.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
        ])
        .map_err(|e| EvalError::MalformedImport {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
