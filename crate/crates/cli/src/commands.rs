//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::anyhow;

use dishwatch_core::classifier::{
    self, build_model, ensure_builtin_backbone, freeze_backbone, Backbone, ClassifierModel,
    TrainConfig, TrainingReport,
};
use dishwatch_core::eval::{
    self, emit_comparison, emit_confusion_csv, export_loss_curve_csv, export_predictions,
    import_loss_curves, import_predictions, plot_loss_curves, ComparisonRow, LossCurve,
    PredictionRecord,
};
use dishwatch_core::forge::{
    build_test_set, generate_dataset, split_cutout_pool, BackgroundPool, CutoutPool,
    DatasetManifest, Scenario,
};
use dishwatch_core::pipeline::preprocess_manifest;
use dishwatch_core::profiler::{
    count_gflops, emit_complexity_table, estimate_memory_gb, mask_remover_desc, resnet50_fc_head,
    ComponentCost, ModelDesc,
};
use dishwatch_core::segmenter::{
    finetune as seg_finetune, AnnotationSet, Checkpoint, LogisticBackend, OracleBackend,
    SegmentationBackend,
};
use dishwatch_core::synth::write_sample_tree;

use crate::config::PipelineConfig;
use crate::logs::EventLog;
use crate::{
    internal_error, user_error, CliResult, EvalArgs, FinetuneSegArgs, PreprocessArgs, ProfileArgs,
    SynthArgs, TrainArgs,
};

struct RunPaths {
    seg_dir: PathBuf,
    seg_pointer: PathBuf,
    train_data: PathBuf,
    test_data: PathBuf,
    pre_train: PathBuf,
    pre_test: PathBuf,
    model_dir: PathBuf,
    eval_dir: PathBuf,
    profile_dir: PathBuf,
    logs_dir: PathBuf,
}

impl RunPaths {
    fn of(config: &PipelineConfig) -> Self {
        let root = config.run_dir();
        Self {
            seg_dir: root.join("seg"),
            seg_pointer: root.join("seg/checkpoint.json"),
            train_data: root.join("train-data"),
            test_data: root.join("test-data"),
            pre_train: root.join("pre-train"),
            pre_test: root.join("pre-test"),
            model_dir: root.join("model"),
            eval_dir: root.join("eval"),
            profile_dir: root.join("profile"),
            logs_dir: root.join("logs"),
        }
    }

    fn classifier_checkpoint(&self) -> PathBuf {
        self.model_dir.join("classifier.dwc")
    }

    fn training_report(&self) -> PathBuf {
        self.model_dir.join("report.json")
    }
}

pub fn synth(config: &PipelineConfig, args: &SynthArgs, dry_run: bool) -> CliResult {
    let scenario = Scenario::parse(&args.scenario)
        .ok_or_else(|| user_error(anyhow!("unknown scenario '{}'", args.scenario)))?;
    if dry_run {
        println!(
            "plan: write {} cutouts x {} conditions, {} backgrounds x 4 conditions, {} annotated photos under {}",
            args.cutouts,
            scenario.class_count(),
            args.backgrounds,
            args.photos,
            args.out.display()
        );
        return Ok(());
    }
    let tree = write_sample_tree(
        &args.out,
        scenario,
        args.cutouts,
        args.backgrounds,
        args.photos,
        config.seed,
    )
    .map_err(user_error)?;
    println!("cutouts:     {}", tree.cutouts_dir.display());
    println!("backgrounds: {}", tree.backgrounds_dir.display());
    println!("photos:      {}", tree.photos_dir.display());
    println!("annotations: {}", tree.annotations_dir.display());
    if args.write_config {
        // paths relative to the config file itself
        let mut cfg = config.clone();
        cfg.paths.cutouts_dir = "cutouts".into();
        cfg.paths.backgrounds_dir = "backgrounds".into();
        cfg.paths.annotations_dir = "annotations".into();
        cfg.paths.weights_cache = "weights-cache".into();
        cfg.scenario.kind = scenario.name().to_string();
        if scenario == Scenario::Extended {
            cfg.scenario.test_size = 180;
            cfg.scenario.per_combination = 15;
        }
        cfg.output_root = "run".into();
        let path = args.out.join("dishwatch.toml");
        cfg.save(&path).map_err(user_error)?;
        println!("config:      {}", path.display());
    }
    Ok(())
}

pub fn init_backbone(config: &PipelineConfig, dry_run: bool) -> CliResult {
    let cache = config.weights_cache();
    if dry_run {
        println!(
            "plan: ensure built-in backbone weights under {}",
            cache.display()
        );
        return Ok(());
    }
    let path = ensure_builtin_backbone(&cache).map_err(user_error)?;
    let backbone = Backbone::load(&path).map_err(internal_error)?;
    println!(
        "backbone '{}' ready: {} (feature dim {})",
        backbone.id,
        path.display(),
        backbone.feature_dim
    );
    Ok(())
}

fn save_checkpoint_pointer(pointer: &Path, ckpt: &Checkpoint) -> CliResult {
    if let Some(parent) = pointer.parent() {
        std::fs::create_dir_all(parent).map_err(|e| internal_error(anyhow!(e)))?;
    }
    std::fs::write(pointer, serde_json::to_vec_pretty(ckpt).unwrap())
        .map_err(|e| internal_error(anyhow!(e)))?;
    Ok(())
}

fn load_checkpoint_pointer(pointer: &Path) -> CliResult<Checkpoint> {
    let text = std::fs::read_to_string(pointer).map_err(|e| {
        user_error(anyhow!(
            "segmentation checkpoint pointer {} unreadable: {e}; run finetune-seg first",
            pointer.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| user_error(anyhow!("{}: {e}", pointer.display())))
}

pub fn finetune_seg(config: &PipelineConfig, args: &FinetuneSegArgs, dry_run: bool) -> CliResult {
    let paths = RunPaths::of(config);
    let out_dir = args.out.clone().unwrap_or(paths.seg_dir.clone());
    let cfg = config.segmenter_config();
    let backend_name = config.segmenter.backend.as_str();
    if dry_run {
        println!(
            "plan: fine-tune '{backend_name}' backend on {} for {} iterations (weights cls={} box={} mask={}), checkpoint to {}",
            config.paths.annotations_dir.display(),
            cfg.iterations,
            cfg.loss_weights.cls,
            cfg.loss_weights.box_,
            cfg.loss_weights.mask,
            out_dir.display()
        );
        return Ok(());
    }
    if !config.paths.annotations_dir.is_dir() {
        return Err(user_error(anyhow!(
            "annotations directory not found: {}",
            config.paths.annotations_dir.display()
        )));
    }
    let mut log = EventLog::open(&paths.logs_dir, "finetune-seg").map_err(internal_error)?;
    match backend_name {
        "oracle" => {
            // nothing to train: the oracle replays ground truth
            let ckpt = OracleBackend::identity_checkpoint(&out_dir).map_err(user_error)?;
            save_checkpoint_pointer(&paths.seg_pointer, &ckpt)?;
            log.emit(serde_json::json!({
                "event": "finetune_seg",
                "backend": "oracle",
                "note": "identity checkpoint emitted; oracle backend replays annotations",
            }))
            .map_err(internal_error)?;
            log.flush().map_err(internal_error)?;
            println!(
                "oracle backend: identity checkpoint at {}",
                ckpt.path.display()
            );
        }
        "logistic" => {
            let set = AnnotationSet::load_dir(&config.paths.annotations_dir).map_err(user_error)?;
            let mut backend = LogisticBackend::new(config.seed);
            let report = seg_finetune(&mut backend, &set, &cfg, &out_dir).map_err(user_error)?;
            log.emit(serde_json::json!({
                "event": "finetune_seg_start",
                "backend": "logistic",
                "iterations": cfg.iterations,
                "w_cls": cfg.loss_weights.cls,
                "w_box": cfg.loss_weights.box_,
                "w_mask": cfg.loss_weights.mask,
            }))
            .map_err(internal_error)?;
            for pt in &report.trace {
                log.emit(serde_json::json!({
                    "event": "seg_loss",
                    "iteration": pt.iteration,
                    "cls": pt.cls,
                    "box": pt.box_,
                    "mask": pt.mask,
                    "total": pt.total,
                }))
                .map_err(internal_error)?;
            }
            log.flush().map_err(internal_error)?;
            save_checkpoint_pointer(&paths.seg_pointer, &report.checkpoint)?;
            println!(
                "logistic backend fine-tuned: final composite loss {:.4}, checkpoint {}",
                report.final_loss,
                report.checkpoint.path.display()
            );
        }
        other => {
            return Err(user_error(anyhow!(
                "unknown segmentation backend '{other}' (expected 'oracle' or 'logistic')"
            )))
        }
    }
    println!(
        "log: {}",
        paths.logs_dir.join("finetune-seg.jsonl").display()
    );
    Ok(())
}

pub fn forge(config: &PipelineConfig, jobs: usize, dry_run: bool) -> CliResult {
    let paths = RunPaths::of(config);
    let spec = config.scenario_spec().map_err(user_error)?;
    let scenario = spec.scenario;
    let combos = scenario.combination_count();
    if dry_run {
        println!(
            "plan: forge {} combinations x {} = {} train images from {} and {}, plus a {}-image test set, into {}",
            combos,
            spec.per_combination,
            spec.dataset_size(),
            config.paths.cutouts_dir.display(),
            config.paths.backgrounds_dir.display(),
            config.scenario.test_size,
            config.run_dir().display()
        );
        return Ok(());
    }

    let pool = CutoutPool::load_dir(&config.paths.cutouts_dir).map_err(user_error)?;
    if pool.is_empty() {
        return Err(user_error(anyhow!(
            "no cutouts found under {}",
            config.paths.cutouts_dir.display()
        )));
    }
    let backgrounds =
        BackgroundPool::load_dir(&config.paths.backgrounds_dir).map_err(user_error)?;
    let (train_pool, val_pool) =
        split_cutout_pool(&pool, config.scenario.train_fraction, config.seed)
            .map_err(user_error)?;
    let params = config.composition_params();

    let previous_manifest = std::fs::read(paths.train_data.join("manifest.jsonl")).ok();

    let train_out = generate_dataset(
        &spec,
        &train_pool,
        &backgrounds,
        &params,
        &paths.train_data,
        jobs,
    )
    .map_err(user_error)?;
    let test_out = build_test_set(
        &spec,
        &val_pool,
        &backgrounds,
        config.scenario.test_size,
        &params,
        &paths.test_data,
        jobs,
    )
    .map_err(user_error)?;

    let mut log = EventLog::open(&paths.logs_dir, "forge").map_err(internal_error)?;
    for (split, out) in [("train", &train_out), ("test", &test_out)] {
        log.emit(serde_json::json!({
            "event": "forge",
            "split": split,
            "images": out.manifest.samples.len(),
            "combinations": combos,
            "seed": spec.seed,
            "manifest": out.manifest_path.display().to_string(),
        }))
        .map_err(internal_error)?;
    }
    log.flush().map_err(internal_error)?;

    println!(
        "train: {} combinations x {} = {} images -> {}",
        combos,
        spec.per_combination,
        train_out.manifest.samples.len(),
        paths.train_data.display()
    );
    println!(
        "test:  {} combinations x {} = {} images -> {}",
        combos,
        config.scenario.test_size / combos,
        test_out.manifest.samples.len(),
        paths.test_data.display()
    );
    if let Some(previous) = previous_manifest {
        let current =
            std::fs::read(&train_out.manifest_path).map_err(|e| internal_error(anyhow!(e)))?;
        if previous == current {
            println!("manifest identical to previous forge (seed {})", spec.seed);
        } else {
            println!("manifest differs from previous forge");
        }
    }
    Ok(())
}

fn backend_for_preprocess(
    config: &PipelineConfig,
    data_dirs: &[&Path],
) -> CliResult<Box<dyn SegmentationBackend + Sync>> {
    match config.segmenter.backend.as_str() {
        "oracle" => {
            let mut images = Vec::new();
            for dir in data_dirs {
                let ann_dir = dir.join("annotations");
                if ann_dir.is_dir() {
                    let set = AnnotationSet::load_dir(&ann_dir).map_err(user_error)?;
                    images.extend(set.images().iter().cloned());
                }
            }
            let set = AnnotationSet::from_images(images);
            Ok(Box::new(
                OracleBackend::from_annotations(&set).map_err(user_error)?,
            ))
        }
        "logistic" => Ok(Box::new(LogisticBackend::new(config.seed))),
        other => Err(user_error(anyhow!(
            "unknown segmentation backend '{other}'"
        ))),
    }
}

pub fn preprocess(config: &PipelineConfig, args: &PreprocessArgs, dry_run: bool) -> CliResult {
    let paths = RunPaths::of(config);
    let fill = config.fill_policy().map_err(user_error)?;
    let mut splits: Vec<(&str, PathBuf, PathBuf)> = Vec::new();
    if args.split == "train" || args.split == "both" {
        splits.push(("train", paths.train_data.clone(), paths.pre_train.clone()));
    }
    if args.split == "test" || args.split == "both" {
        splits.push(("test", paths.test_data.clone(), paths.pre_test.clone()));
    }
    if dry_run {
        for (name, src, dst) in &splits {
            println!(
                "plan: preprocess {name} split {} -> {} with '{}' backend (fill {:?})",
                src.display(),
                dst.display(),
                config.segmenter.backend,
                fill
            );
        }
        return Ok(());
    }

    let pointer = args.checkpoint.clone().unwrap_or(paths.seg_pointer.clone());
    let checkpoint = if pointer.is_file() {
        load_checkpoint_pointer(&pointer)?
    } else if config.segmenter.backend == "oracle" {
        let ckpt = OracleBackend::identity_checkpoint(&paths.seg_dir).map_err(user_error)?;
        save_checkpoint_pointer(&paths.seg_pointer, &ckpt)?;
        ckpt
    } else {
        return Err(user_error(anyhow!(
            "no segmentation checkpoint at {}; run finetune-seg first",
            pointer.display()
        )));
    };

    let data_dirs: Vec<&Path> = splits.iter().map(|(_, src, _)| src.as_path()).collect();
    let backend = backend_for_preprocess(config, &data_dirs)?;
    let cfg = config.segmenter_config();
    let mut log = EventLog::open(&paths.logs_dir, "preprocess").map_err(internal_error)?;
    for (name, src, dst) in &splits {
        let manifest_path = src.join("manifest.jsonl");
        let manifest = DatasetManifest::load(&manifest_path).map_err(user_error)?;
        let outcome = preprocess_manifest(
            &manifest,
            src,
            backend.as_ref(),
            &checkpoint,
            &cfg,
            fill,
            dst,
        )
        .map_err(user_error)?;
        log.emit(serde_json::json!({
            "event": "preprocess",
            "split": name,
            "processed": outcome.processed,
            "skipped": outcome.skipped.len(),
            "manifest": outcome.manifest_path.display().to_string(),
        }))
        .map_err(internal_error)?;
        println!(
            "{name}: {} images mask-removed -> {} ({} skipped)",
            outcome.processed,
            dst.display(),
            outcome.skipped.len()
        );
        for path in &outcome.skipped {
            println!("  skipped (no detection): {}", path.display());
        }
    }
    log.flush().map_err(internal_error)?;
    Ok(())
}

pub fn train(config: &PipelineConfig, args: &TrainArgs, dry_run: bool) -> CliResult {
    let paths = RunPaths::of(config);
    let scenario = config.scenario().map_err(user_error)?;
    let class_count = scenario.class_count();
    let epochs = args.epochs.unwrap_or(config.train.epochs);
    if dry_run {
        println!(
            "plan: train {class_count}-class head for {epochs} epochs (Adam lr {}, weight decay {}, batch {}, dropout {}) on {} vs {}",
            config.train.learning_rate,
            config.train.weight_decay,
            config.train.batch_size,
            config.train.dropout,
            paths.pre_train.display(),
            paths.pre_test.display()
        );
        return Ok(());
    }

    let train_manifest =
        DatasetManifest::load(&paths.pre_train.join("manifest.jsonl")).map_err(user_error)?;
    let val_manifest =
        DatasetManifest::load(&paths.pre_test.join("manifest.jsonl")).map_err(user_error)?;
    train_manifest
        .validate(&paths.pre_train)
        .map_err(user_error)?;
    val_manifest.validate(&paths.pre_test).map_err(user_error)?;

    let cache = config.weights_cache();
    let backbone_path = ensure_builtin_backbone(&cache).map_err(user_error)?;

    let ckpt_path = paths.classifier_checkpoint();
    let report_path = paths.training_report();
    let (mut model, previous_report) = if args.resume && ckpt_path.is_file() {
        let model = ClassifierModel::load_checkpoint(&ckpt_path, &cache).map_err(user_error)?;
        let report = TrainingReport::load(&report_path).ok();
        println!(
            "resuming from {} ({} prior epochs)",
            ckpt_path.display(),
            report.as_ref().map(|r| r.epochs.len()).unwrap_or(0)
        );
        (model, report)
    } else {
        let mut model =
            build_model(&backbone_path, class_count, config.seed).map_err(user_error)?;
        freeze_backbone(&mut model);
        (model, None)
    };

    let cfg = TrainConfig {
        learning_rate: config.train.learning_rate,
        weight_decay: config.train.weight_decay,
        epochs,
        batch_size: config.train.batch_size,
        dropout: config.train.dropout,
        class_count,
        seed: config.seed,
    };
    let mut report = classifier::train(
        &mut model,
        &train_manifest,
        &paths.pre_train,
        &val_manifest,
        &paths.pre_test,
        &cfg,
    )
    .map_err(user_error)?;

    // resume bookkeeping: continue the epoch numbering
    if let Some(previous) = previous_report {
        let offset = previous.epochs.len();
        for e in &mut report.epochs {
            e.epoch += offset;
        }
        report.best_epoch += offset;
        let mut merged = previous.epochs;
        merged.extend(report.epochs.clone());
        report.epochs = merged;
    }

    std::fs::create_dir_all(&paths.model_dir).map_err(|e| internal_error(anyhow!(e)))?;
    model.save_checkpoint(&ckpt_path).map_err(internal_error)?;
    report.save(&report_path).map_err(internal_error)?;

    // loss curve in the exchange format
    let curve = LossCurve {
        model_id: "proposed".to_string(),
        class_count: class_count as u32,
        layer_count: 3,
        epochs: report.epochs.iter().map(|e| e.epoch as u32).collect(),
        losses: report.epochs.iter().map(|e| e.train_loss).collect(),
        normalized: true,
    };
    export_loss_curve_csv(&[curve], &paths.model_dir.join("loss_curve.csv")).map_err(user_error)?;

    let mut log = EventLog::open(&paths.logs_dir, "train").map_err(internal_error)?;
    for e in &report.epochs {
        log.emit(serde_json::json!({
            "event": "epoch",
            "epoch": e.epoch,
            "train_loss": e.train_loss,
            "val_loss": e.val_loss,
            "val_accuracy": e.val_accuracy,
            "wall_clock_sec": e.wall_clock_sec,
        }))
        .map_err(internal_error)?;
    }
    log.flush().map_err(internal_error)?;

    println!(
        "trained {} epochs: final train loss {:.4}, best val accuracy {:.4} (epoch {})",
        report.epochs.len(),
        report.final_train_loss,
        report.best_val_accuracy,
        report.best_epoch
    );
    println!("checkpoint: {}", ckpt_path.display());
    if args.freeze_verify {
        println!(
            "freeze-verify: backbone hash delta = {} layers changed, head = {} layers changed",
            report.changed_backbone_layers.len(),
            report.changed_head_layers.len()
        );
    }
    Ok(())
}

pub fn eval(config: &PipelineConfig, args: &EvalArgs, dry_run: bool) -> CliResult {
    let paths = RunPaths::of(config);
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or(paths.classifier_checkpoint());
    if dry_run {
        println!(
            "plan: evaluate {} on {}, imports: {} loss files, {} prediction files -> {}",
            ckpt_path.display(),
            paths.pre_test.display(),
            args.import_losses.len(),
            args.import_predictions.len(),
            paths.eval_dir.display()
        );
        return Ok(());
    }
    std::fs::create_dir_all(&paths.eval_dir).map_err(|e| internal_error(anyhow!(e)))?;

    let cache = config.weights_cache();
    let model = ClassifierModel::load_checkpoint(&ckpt_path, &cache).map_err(user_error)?;
    let test_manifest =
        DatasetManifest::load(&paths.pre_test.join("manifest.jsonl")).map_err(user_error)?;
    test_manifest
        .validate(&paths.pre_test)
        .map_err(user_error)?;

    // proposed-model predictions
    let mut records = Vec::with_capacity(test_manifest.samples.len());
    for sample in &test_manifest.samples {
        let img = dishwatch_core::imaging::load_image(&paths.pre_test.join(&sample.relative_path))
            .map_err(user_error)?;
        let probs = classifier::predict(&model, &img).map_err(user_error)?;
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        records.push(PredictionRecord {
            sample_id: sample.relative_path.display().to_string(),
            true_class: sample.dish_condition.to_string(),
            predicted_class: model.labels[argmax].clone(),
            probabilities: Some(probs),
            model_id: "proposed".to_string(),
        });
    }
    export_predictions(&records, &paths.eval_dir.join("predictions.jsonl")).map_err(user_error)?;

    let vocab: Vec<String> = model.labels.clone();
    let counts = eval::confusion_with_vocab(&records, &vocab).map_err(user_error)?;
    emit_confusion_csv(&counts, &paths.eval_dir.join("confusion.csv")).map_err(user_error)?;
    let accuracy = eval::accuracy(&records).map_err(user_error)?;
    let (map, excluded) = eval::mean_ap(&counts).map_err(user_error)?;
    for class in &excluded {
        println!("warning: class '{class}' never predicted; excluded from mAP");
    }

    // consolidated metrics summary
    let per_class_ap: serde_json::Map<String, serde_json::Value> = vocab
        .iter()
        .map(|class| {
            let value = eval::average_precision(&counts, class)
                .map(serde_json::Value::from)
                .unwrap_or(serde_json::Value::Null);
            (class.clone(), value)
        })
        .collect();
    let summary = serde_json::json!({
        "model": "proposed",
        "test_images": records.len(),
        "accuracy": accuracy,
        "map": map,
        "per_class_ap": per_class_ap,
        "excluded_from_map": excluded,
    });
    std::fs::write(
        paths.eval_dir.join("metrics.json"),
        serde_json::to_vec_pretty(&summary).unwrap(),
    )
    .map_err(|e| internal_error(anyhow!(e)))?;

    let train_manifest = DatasetManifest::load(&paths.pre_train.join("manifest.jsonl")).ok();
    let mut rows = vec![ComparisonRow {
        model: "proposed".to_string(),
        training_images: train_manifest.as_ref().map(|m| m.samples.len()),
        map,
        accuracy,
    }];

    // imported baselines: one row per model id found in each file
    for path in &args.import_predictions {
        let imported = import_predictions(path, None).map_err(user_error)?;
        let mut by_model: std::collections::BTreeMap<String, Vec<PredictionRecord>> =
            std::collections::BTreeMap::new();
        for r in imported {
            by_model.entry(r.model_id.clone()).or_default().push(r);
        }
        for (model_id, group) in by_model {
            let counts = eval::confusion(&group).map_err(user_error)?;
            let (map, _) = eval::mean_ap(&counts).map_err(user_error)?;
            rows.push(ComparisonRow {
                model: model_id,
                training_images: None,
                map,
                accuracy: eval::accuracy(&group).map_err(user_error)?,
            });
        }
    }
    emit_comparison(&rows, &paths.eval_dir.join("comparison.csv")).map_err(user_error)?;

    // loss curves: ours plus normalized imports
    let mut curves: Vec<LossCurve> = Vec::new();
    let own_curve = paths.model_dir.join("loss_curve.csv");
    if own_curve.is_file() {
        let mut own = import_loss_curves(&own_curve).map_err(user_error)?;
        for c in &mut own {
            c.normalized = true; // the proposed model's loss is already on the common scale
        }
        curves.extend(own);
    }
    for path in &args.import_losses {
        curves.extend(import_loss_curves(path).map_err(user_error)?);
    }
    if !curves.is_empty() {
        plot_loss_curves(&curves, &paths.eval_dir.join("loss_curves.png")).map_err(user_error)?;
    }

    if args.mmd {
        let backbone = Backbone::load(&ensure_builtin_backbone(&cache).map_err(user_error)?)
            .map_err(user_error)?;
        let mut holds = 0;
        for trial in 0..5u64 {
            let result = dishwatch_core::pipeline::domain_gap_trial(&backbone, config.seed + trial)
                .map_err(user_error)?;
            let ok = result.mmd_masked <= result.mmd_unmasked;
            holds += ok as u32;
            println!(
                "mmd trial {trial}: masked {:.4} vs unmasked {:.4} ({})",
                result.mmd_masked,
                result.mmd_unmasked,
                if ok {
                    "masked closer"
                } else {
                    "unmasked closer"
                }
            );
        }
        println!("domain-gap ordering holds in {holds}/5 trials");
    }

    println!(
        "accuracy {:.4} ({:.2}%), mAP {:.4} ({:.2}%) over {} test images",
        accuracy,
        accuracy * 100.0,
        map,
        map * 100.0,
        records.len()
    );
    println!("reports under {}", paths.eval_dir.display());
    Ok(())
}

pub fn profile(config: &PipelineConfig, args: &ProfileArgs, dry_run: bool) -> CliResult {
    let paths = RunPaths::of(config);
    let input = (args.input_size, args.input_size);
    if dry_run {
        println!(
            "plan: profile reference architecture at {}x{} (batch {}) -> {}",
            input.0,
            input.1,
            args.batch_size,
            paths.profile_dir.join("complexity.csv").display()
        );
        return Ok(());
    }
    std::fs::create_dir_all(&paths.profile_dir).map_err(|e| internal_error(anyhow!(e)))?;

    let scenario = config.scenario().map_err(user_error)?;
    let reference = resnet50_fc_head(scenario.class_count());
    let remover = mask_remover_desc();
    let head_only = ModelDesc {
        name: "fc_head".to_string(),
        input_channels: 2048,
        layers: reference
            .layers
            .iter()
            .filter(|l| {
                matches!(
                    l,
                    dishwatch_core::profiler::LayerDesc::GlobalAvgPool { .. }
                        | dishwatch_core::profiler::LayerDesc::Linear { .. }
                )
            })
            .cloned()
            .collect(),
    };

    let mut costs = Vec::new();
    for desc in [&reference, &remover, &head_only] {
        // the head operates on pooled features, so its cost is independent
        // of the spatial input; evaluate it at 1x1 to keep the activation
        // accounting meaningful
        let (channels, eval_px) = if desc.name == "fc_head" {
            (2048, (1, 1))
        } else {
            (desc.input_channels, input)
        };
        let model = ModelDesc {
            input_channels: channels,
            ..desc.clone()
        };
        costs.push(ComponentCost {
            component: model.name.clone(),
            gflops: count_gflops(&model, eval_px).map_err(user_error)?,
            memory_gb: Some(
                estimate_memory_gb(&model, eval_px, args.batch_size).map_err(user_error)?,
            ),
            input_px: input,
            batch_size: args.batch_size,
        });
    }
    for path in &args.model_descs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| user_error(anyhow!("{}: {e}", path.display())))?;
        let desc = ModelDesc::from_json(&text)
            .map_err(|e| user_error(anyhow!("{}: {e}", path.display())))?;
        costs.push(ComponentCost {
            component: desc.name.clone(),
            gflops: count_gflops(&desc, input).map_err(user_error)?,
            memory_gb: Some(estimate_memory_gb(&desc, input, args.batch_size).map_err(user_error)?),
            input_px: input,
            batch_size: args.batch_size,
        });
    }
    for path in &args.import_costs {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| user_error(anyhow!("{}: {e}", path.display())))?;
        for row in reader.deserialize::<ImportedCost>() {
            let row = row.map_err(|e| user_error(anyhow!("{}: {e}", path.display())))?;
            let (w, h) = row
                .input_px
                .split_once('x')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| {
                    user_error(anyhow!(
                        "{}: bad input_px '{}'",
                        path.display(),
                        row.input_px
                    ))
                })?;
            costs.push(ComponentCost {
                component: row.model,
                gflops: row.gflops,
                memory_gb: row.memory_gb,
                input_px: (w, h),
                batch_size: row.batch_size,
            });
        }
    }

    let table = paths.profile_dir.join("complexity.csv");
    emit_complexity_table(&costs, &table).map_err(user_error)?;

    // the configured feature extractor runs at its own stem resolution
    let cache = config.weights_cache();
    if let Ok(backbone_path) = ensure_builtin_backbone(&cache) {
        if let Ok(backbone) = Backbone::load(&backbone_path) {
            let desc = ModelDesc {
                name: backbone.id.clone(),
                input_channels: 3,
                layers: backbone.complexity_layers(),
            };
            let stem = (backbone.stem_size, backbone.stem_size);
            let gflops = count_gflops(&desc, stem).map_err(internal_error)?;
            println!(
                "configured backbone '{}' forward cost at its {}px stem: {:.4} GFLOPs",
                backbone.id, backbone.stem_size, gflops
            );
        }
    }

    for c in &costs {
        println!(
            "{:<24} {:>10.4} GFLOPs  {:>8} GB",
            c.component,
            c.gflops,
            c.memory_gb
                .map(|m| format!("{m:.2}"))
                .unwrap_or_else(|| "-".into())
        );
    }
    println!(
        "table: {} ({}x{} px, batch {})",
        table.display(),
        input.0,
        input.1,
        args.batch_size
    );
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct ImportedCost {
    model: String,
    gflops: f64,
    memory_gb: Option<f64>,
    input_px: String,
    batch_size: u32,
}
