//! Head fine-tuning over forged manifests.
//!
//! The backbone stays frozen, so features are extracted once per image and
//! cached for the whole run; epochs are Adam steps over shuffled minibatches
//! of cached embeddings. Batch order, dropout masks and head initialization
//! all derive from the configured seed.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::AdamState;
use super::{cross_entropy, ClassifierError, ClassifierModel};
use crate::forge::DatasetManifest;
use crate::imaging::load_image;

/// Adam hyperparameters and schedule for head fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub class_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 5e-4,
            epochs: 50,
            batch_size: 16,
            dropout: 0.5,
            class_count: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Full-pass training loss in evaluation mode (dropout off).
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Measured duration; the one field exempt from byte-identical
    /// reproduction across reruns.
    pub wall_clock_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub best_val_accuracy: f64,
    /// Layer names whose content hash moved between epoch 0 and the end.
    pub changed_backbone_layers: Vec<String>,
    pub changed_head_layers: Vec<String>,
    pub labels: Vec<String>,
}

impl TrainingReport {
    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("serializes")).map_err(|e| {
            ClassifierError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClassifierError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ClassifierError::WeightsParse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

struct FeatureSet {
    features: Array2<f64>,
    targets: Vec<usize>,
}

fn load_features(
    model: &ClassifierModel,
    manifest: &DatasetManifest,
    base_dir: &Path,
    labels: &[String],
    what: &str,
) -> Result<FeatureSet, ClassifierError> {
    if manifest.samples.is_empty() {
        return Err(ClassifierError::EmptyManifest(what.to_string()));
    }
    if !manifest.header.preprocessed {
        return Err(ClassifierError::UnpreprocessedInput(format!(
            "{what} manifest lacks mask-removal provenance; run preprocess first"
        )));
    }
    let rows: Vec<(Vec<f32>, usize)> = manifest
        .samples
        .par_iter()
        .map(|sample| -> Result<(Vec<f32>, usize), ClassifierError> {
            let img = load_image(&base_dir.join(&sample.relative_path))?;
            let features = model.backbone.extract(&img)?;
            let label = sample.dish_condition.to_string();
            let target = labels.iter().position(|l| *l == label).ok_or_else(|| {
                ClassifierError::InvalidProbability(format!("label '{label}' not among {labels:?}"))
            })?;
            Ok((features, target))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let dim = model.feature_dim();
    let mut features = Array2::<f64>::zeros((rows.len(), dim));
    let mut targets = Vec::with_capacity(rows.len());
    for (i, (f, t)) in rows.into_iter().enumerate() {
        for (j, v) in f.into_iter().enumerate() {
            features[[i, j]] = v as f64;
        }
        targets.push(t);
    }
    Ok(FeatureSet { features, targets })
}

fn evaluate(model: &ClassifierModel, set: &FeatureSet) -> (f64, f64) {
    let probs = model.head.forward_eval(&set.features);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, &target) in set.targets.iter().enumerate() {
        let row = probs.row(i);
        loss += cross_entropy(target, row.as_slice().expect("contiguous")).unwrap_or(f64::INFINITY);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        if argmax == target {
            correct += 1;
        }
    }
    (
        loss / set.targets.len() as f64,
        correct as f64 / set.targets.len() as f64,
    )
}

/// Fine-tune the head on a preprocessed training manifest, tracking the best
/// epoch by validation accuracy (ties go to the lower validation loss).
pub fn train(
    model: &mut ClassifierModel,
    train_manifest: &DatasetManifest,
    train_dir: &Path,
    val_manifest: &DatasetManifest,
    val_dir: &Path,
    cfg: &TrainConfig,
) -> Result<TrainingReport, ClassifierError> {
    if !model.backbone_is_frozen() {
        return Err(ClassifierError::BackboneNotFrozen);
    }
    let scenario = train_manifest.header.scenario;
    let labels: Vec<String> = scenario
        .dish_conditions()
        .iter()
        .map(|c| c.to_string())
        .collect();
    if cfg.class_count != labels.len() || model.class_count() != labels.len() {
        return Err(ClassifierError::InvalidClassCount(model.class_count()));
    }
    model.labels = labels.clone();
    model.head.dropout = cfg.dropout;

    let manifest_before = model.weights_manifest();

    let train_set = load_features(model, train_manifest, train_dir, &labels, "train")?;
    let val_set = load_features(model, val_manifest, val_dir, &labels, "val")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.head, cfg.learning_rate, cfg.weight_decay);
    let n = train_set.targets.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize)> = None; // (acc, -loss, epoch)
    let mut best_head = model.head.clone();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut x = Array2::<f64>::zeros((batch.len(), model.feature_dim()));
            let mut targets = Vec::with_capacity(batch.len());
            for (bi, &si) in batch.iter().enumerate() {
                x.row_mut(bi).assign(&train_set.features.row(si));
                targets.push(train_set.targets[si]);
            }
            let (probs, cache) = model.head.forward_train(&x, &mut rng);
            let grads = model.head.backward(&x, &probs, &targets, &cache);
            adam.step(&mut model.head, &grads);
        }
        let (train_loss, _) = evaluate(model, &train_set);
        let (val_loss, val_accuracy) = evaluate(model, &val_set);
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            wall_clock_sec: started.elapsed().as_secs_f64(),
        });
        let candidate = (val_accuracy, -val_loss, epoch);
        if best.is_none_or(|(a, nl, _)| (val_accuracy, -val_loss) > (a, nl)) {
            best = Some(candidate);
            best_head = model.head.clone();
        }
    }

    model.head = best_head;
    let manifest_after = model.weights_manifest();
    let changed = manifest_before.changed_layers(&manifest_after);
    let (changed_backbone, changed_head): (Vec<String>, Vec<String>) =
        changed.into_iter().partition(|n| !n.starts_with("head."));

    let (final_train_loss, _) = evaluate(model, &train_set);
    let (best_acc, _, best_epoch) = best.unwrap_or((0.0, 0.0, 0));
    Ok(TrainingReport {
        epochs,
        best_epoch,
        final_train_loss,
        best_val_accuracy: best_acc,
        changed_backbone_layers: changed_backbone,
        changed_head_layers: changed_head,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{build_model, ensure_builtin_backbone, freeze_backbone};
    use crate::forge::{CompositionParams, DatasetManifest, ManifestHeader, Scenario};
    use crate::imaging::{
        save_image, BackgroundCondition, Channels, DishCondition, Image, LabeledSample, Split,
    };
    use tempfile::tempdir;

    fn class_image(condition: DishCondition, variant: u32) -> Image {
        let mut img = Image::new(300, 300, Channels::Rgb).unwrap();
        for y in 0..300u32 {
            for x in 0..300u32 {
                // black field with a condition-coded square
                let inside = (80..220).contains(&x) && (80..220).contains(&y);
                if inside {
                    let p: [u8; 3] = match condition {
                        DishCondition::Snow => [235, 235, 240],
                        DishCondition::Wet => [40, 45, 70],
                        DishCondition::Normal => [140, 130, 120],
                    };
                    let jitter = ((x * 13 + y * 7 + variant * 31) % 21) as u8;
                    img.set_pixel(x, y, [p[0].saturating_add(jitter / 3), p[1], p[2], 255]);
                }
            }
        }
        img
    }

    fn toy_manifest(
        dir: &Path,
        scenario: Scenario,
        per_class: usize,
        split: Split,
    ) -> DatasetManifest {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        let mut samples = Vec::new();
        for (ci, &condition) in scenario.dish_conditions().iter().enumerate() {
            for k in 0..per_class {
                let img = class_image(condition, (ci * per_class + k) as u32);
                let rel = format!("images/{condition}_{split}_{k}.png");
                save_image(&img, &dir.join(&rel)).unwrap();
                samples.push(LabeledSample {
                    relative_path: rel.into(),
                    dish_condition: condition,
                    background_condition: BackgroundCondition::ALL[k % 4],
                    split,
                    source_cutout_id: format!("{condition}/{k}"),
                    combination_index: ci as u32,
                    rng_stream_id: format!("{ci:02}{k:02}"),
                });
            }
        }
        DatasetManifest {
            header: ManifestHeader {
                scenario,
                seed: 1,
                tool_version: "test".to_string(),
                preprocessed: true,
                params: CompositionParams::default(),
            },
            samples,
        }
    }

    #[test]
    fn memorizes_a_tiny_two_class_set() {
        let dir = tempdir().unwrap();
        let backbone = ensure_builtin_backbone(dir.path()).unwrap();
        let mut model = build_model(&backbone, 2, 5).unwrap();
        freeze_backbone(&mut model);
        let data_dir = dir.path().join("data");
        let manifest = toy_manifest(&data_dir, Scenario::Initial, 8, Split::Train);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &manifest, &data_dir, &manifest, &data_dir, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 50);
        assert!(
            report.best_val_accuracy == 1.0,
            "expected memorization, got {}",
            report.best_val_accuracy
        );
        assert!(report.final_train_loss < 0.1);
        // freeze invariant: backbone hashes never move, head hashes do
        assert!(report.changed_backbone_layers.is_empty());
        assert!(!report.changed_head_layers.is_empty());

        // a training-set snow image classifies as snow after convergence
        let snow_img =
            crate::imaging::load_image(&data_dir.join("images/snow_train_0.png")).unwrap();
        let probs = crate::classifier::predict(&model, &snow_img).unwrap();
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(model.labels[argmax], "snow");
    }

    #[test]
    fn zero_learning_rate_freezes_the_loss_curve() {
        let dir = tempdir().unwrap();
        let backbone = ensure_builtin_backbone(dir.path()).unwrap();
        let mut model = build_model(&backbone, 2, 5).unwrap();
        freeze_backbone(&mut model);
        let data_dir = dir.path().join("data");
        let manifest = toy_manifest(&data_dir, Scenario::Initial, 2, Split::Train);
        let cfg = TrainConfig {
            epochs: 4,
            learning_rate: 0.0,
            weight_decay: 0.0,
            seed: 9,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &manifest, &data_dir, &manifest, &data_dir, &cfg).unwrap();
        let first = report.epochs[0].train_loss;
        for e in &report.epochs {
            assert!((e.train_loss - first).abs() < 1e-12);
        }
        assert!(report.changed_head_layers.is_empty());
    }

    #[test]
    fn unfrozen_backbone_is_rejected() {
        let dir = tempdir().unwrap();
        let backbone = ensure_builtin_backbone(dir.path()).unwrap();
        let mut model = build_model(&backbone, 2, 5).unwrap();
        let data_dir = dir.path().join("data");
        let manifest = toy_manifest(&data_dir, Scenario::Initial, 2, Split::Train);
        let err = train(
            &mut model,
            &manifest,
            &data_dir,
            &manifest,
            &data_dir,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ClassifierError::BackboneNotFrozen));
    }

    #[test]
    fn unpreprocessed_manifest_is_rejected() {
        let dir = tempdir().unwrap();
        let backbone = ensure_builtin_backbone(dir.path()).unwrap();
        let mut model = build_model(&backbone, 2, 5).unwrap();
        freeze_backbone(&mut model);
        let data_dir = dir.path().join("data");
        let mut manifest = toy_manifest(&data_dir, Scenario::Initial, 2, Split::Train);
        manifest.header.preprocessed = false;
        let err = train(
            &mut model,
            &manifest,
            &data_dir,
            &manifest,
            &data_dir,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ClassifierError::UnpreprocessedInput(_)));
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempdir().unwrap();
        let backbone = ensure_builtin_backbone(dir.path()).unwrap();
        let mut model = build_model(&backbone, 2, 5).unwrap();
        freeze_backbone(&mut model);
        let manifest = DatasetManifest {
            header: ManifestHeader {
                scenario: Scenario::Initial,
                seed: 0,
                tool_version: "test".into(),
                preprocessed: true,
                params: CompositionParams::default(),
            },
            samples: vec![],
        };
        let err = train(
            &mut model,
            &manifest,
            dir.path(),
            &manifest,
            dir.path(),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ClassifierError::EmptyManifest(_)));
    }

    #[test]
    fn smoothed_training_loss_is_monotone_on_toy_data() {
        let dir = tempdir().unwrap();
        let backbone = ensure_builtin_backbone(dir.path()).unwrap();
        let mut model = build_model(&backbone, 2, 5).unwrap();
        freeze_backbone(&mut model);
        let data_dir = dir.path().join("data");
        let manifest = toy_manifest(&data_dir, Scenario::Initial, 10, Split::Train);
        let cfg = TrainConfig {
            epochs: 25,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &manifest, &data_dir, &manifest, &data_dir, &cfg).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
        let window = 5;
        let smoothed: Vec<f64> = losses
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        for pair in smoothed.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-6,
                "smoothed loss increased: {smoothed:?}"
            );
        }
    }
}
