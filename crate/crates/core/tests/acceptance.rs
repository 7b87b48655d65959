//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values. Oracles here are written independently of the
//! implementation paths they check.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dishwatch_core::classifier::{
    self, build_model, ensure_builtin_backbone, freeze_backbone, Backbone, TrainConfig,
};
use dishwatch_core::eval::{
    accuracy, average_precision, confusion, loss_alpha, mean_ap, mmd_estimate, normalize_loss,
    PredictionRecord,
};
use dishwatch_core::forge::{
    build_test_set, generate_dataset, split_cutout_pool, CompositionParams, Scenario, ScenarioSpec,
};
use dishwatch_core::imaging::{BinaryMask, Channels, Image};
use dishwatch_core::pipeline::{domain_gap_trial, preprocess_manifest, CLASSIFIER_FILL};
use dishwatch_core::profiler::{
    count_gflops, peak_pipeline_memory, resnet50_fc_head, total_pipeline_gflops, ComponentCost,
};
use dishwatch_core::segmenter::{
    remove_background, AnnotationSet, FillPolicy, OracleBackend, SegmenterConfig,
};
use dishwatch_core::synth;

// ---------------------------------------------------------------------------
// criterion 1: metric oracle equivalence
// ---------------------------------------------------------------------------

/// Brute-force tallies written with plain nested loops, no shared code with
/// the eval module.
fn oracle_metrics(records: &[PredictionRecord]) -> (f64, Vec<(String, Option<f64>)>, f64) {
    let mut classes: Vec<String> = Vec::new();
    for r in records {
        for c in [&r.true_class, &r.predicted_class] {
            if !classes.contains(c) {
                classes.push(c.clone());
            }
        }
    }
    classes.sort();

    let mut correct = 0usize;
    for r in records {
        if r.true_class == r.predicted_class {
            correct += 1;
        }
    }
    let acc = correct as f64 / records.len() as f64;

    let mut aps: Vec<(String, Option<f64>)> = Vec::new();
    let mut defined_sum = 0.0;
    let mut defined_count = 0usize;
    for class in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for r in records {
            if &r.predicted_class == class {
                if &r.true_class == class {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let ap = if tp + fp > 0 {
            Some(tp as f64 / (tp + fp) as f64)
        } else {
            None
        };
        if let Some(v) = ap {
            defined_sum += v;
            defined_count += 1;
        }
        aps.push((class.clone(), ap));
    }
    let map = defined_sum / defined_count as f64;
    (acc, aps, map)
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for &num_classes in &[2usize, 3] {
        let labels: Vec<String> = ["snow", "wet", "normal"][..num_classes]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let records: Vec<PredictionRecord> = (0..200)
            .map(|i| PredictionRecord {
                sample_id: format!("s{i}"),
                true_class: labels[rng.random_range(0..num_classes)].clone(),
                predicted_class: labels[rng.random_range(0..num_classes)].clone(),
                probabilities: None,
                model_id: "m".into(),
            })
            .collect();

        let (oracle_acc, oracle_aps, oracle_map) = oracle_metrics(&records);
        let counts = confusion(&records).unwrap();
        assert_eq!(accuracy(&records).unwrap(), oracle_acc);
        for (class, oracle_ap) in &oracle_aps {
            match (average_precision(&counts, class), oracle_ap) {
                (Ok(ap), Some(expected)) => assert_eq!(ap, *expected, "AP for {class}"),
                (Err(_), None) => {}
                (got, want) => panic!("AP disagreement for {class}: {got:?} vs {want:?}"),
            }
        }
        let (map, _) = mean_ap(&counts).unwrap();
        assert_eq!(map, oracle_map);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("acceptance 01 metric-oracle-equivalence: PASS ({elapsed:?} for 2x200 records)");
}

// ---------------------------------------------------------------------------
// criterion 2: normalization identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_normalization_identity() {
    assert_eq!(loss_alpha(80, 3).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut max_err: f64 = 0.0;
    for _ in 0..100 {
        let x: f64 = rng.random_range(1e-4..10.0);
        let c: u32 = rng.random_range(1..=120);
        let nl: u32 = rng.random_range(1..=12);
        let alpha = loss_alpha(c, nl).unwrap();
        let recovered = normalize_loss(alpha * x, c, nl).unwrap();
        max_err = max_err.max((recovered - x).abs());
    }
    assert!(max_err < 1e-12, "max error {max_err}");
    println!("acceptance 02 normalization-identity: PASS (alpha(80,3)=1 exact, max roundtrip error {max_err:.2e})");
}

// ---------------------------------------------------------------------------
// criterion 3: freeze invariant
// ---------------------------------------------------------------------------

fn toy_preprocessed_manifest(
    dir: &Path,
    scenario: Scenario,
    per_class: usize,
) -> dishwatch_core::forge::DatasetManifest {
    use dishwatch_core::forge::{DatasetManifest, ManifestHeader};
    use dishwatch_core::imaging::{save_image, BackgroundCondition, LabeledSample, Split};
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let mut samples = Vec::new();
    for (ci, &condition) in scenario.dish_conditions().iter().enumerate() {
        for k in 0..per_class {
            let mut img = Image::new(300, 300, Channels::Rgb).unwrap();
            for y in 90..210u32 {
                for x in 90..210u32 {
                    let v: [u8; 3] = match condition {
                        dishwatch_core::imaging::DishCondition::Snow => [240, 240, 245],
                        dishwatch_core::imaging::DishCondition::Wet => [50, 55, 80],
                        dishwatch_core::imaging::DishCondition::Normal => [150, 140, 130],
                    };
                    let j = ((x * 11 + y * 7 + k as u32 * 23) % 17) as u8;
                    img.set_pixel(x, y, [v[0].saturating_add(j), v[1], v[2], 255]);
                }
            }
            let rel = format!("images/{condition}_{k}.png");
            save_image(&img, &dir.join(&rel)).unwrap();
            samples.push(LabeledSample {
                relative_path: rel.into(),
                dish_condition: condition,
                background_condition: BackgroundCondition::ALL[k % 4],
                split: Split::Train,
                source_cutout_id: format!("{condition}/{k}"),
                combination_index: ci as u32,
                rng_stream_id: format!("{ci}{k}"),
            });
        }
    }
    DatasetManifest {
        header: ManifestHeader {
            scenario,
            seed: 7,
            tool_version: "acceptance".into(),
            preprocessed: true,
            params: CompositionParams::default(),
        },
        samples,
    }
}

#[test]
fn criterion_03_freeze_invariant() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let backbone_path = ensure_builtin_backbone(&tmp.path().join("cache")).unwrap();
    let mut model = build_model(&backbone_path, 2, 3).unwrap();
    freeze_backbone(&mut model);
    let manifest_epoch0 = model.weights_manifest();

    let data_dir = tmp.path().join("toy");
    let manifest = toy_preprocessed_manifest(&data_dir, Scenario::Initial, 8); // 16 images
    assert_eq!(manifest.samples.len(), 16);
    let cfg = TrainConfig {
        epochs: 5,
        class_count: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let report =
        classifier::train(&mut model, &manifest, &data_dir, &manifest, &data_dir, &cfg).unwrap();

    let manifest_after = model.weights_manifest();
    let changed = manifest_epoch0.changed_layers(&manifest_after);
    let backbone_changed: Vec<&String> =
        changed.iter().filter(|n| !n.starts_with("head.")).collect();
    let head_changed: Vec<&String> = changed.iter().filter(|n| n.starts_with("head.")).collect();
    assert!(
        backbone_changed.is_empty(),
        "backbone layers moved: {backbone_changed:?}"
    );
    assert!(!head_changed.is_empty(), "no head layer changed");
    assert!(report.changed_backbone_layers.is_empty());

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "acceptance 03 freeze-invariant: PASS (5 epochs/16 images in {elapsed:?}; backbone delta 0, head delta {})",
        head_changed.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 4: cross-entropy gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_cross_entropy_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let true_class = rng.random_range(0..3);
        let analytic = classifier::softmax_cross_entropy_grad(&logits, true_class);
        for i in 0..3 {
            let mut up = logits.clone();
            up[i] += h;
            let mut down = logits.clone();
            down[i] -= h;
            let fd = (classifier::softmax_cross_entropy(&up, true_class).0
                - classifier::softmax_cross_entropy(&down, true_class).0)
                / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            worst = worst.max((fd - analytic[i]).abs() / denom);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
    println!("acceptance 04 cross-entropy-gradient: PASS (worst relative error {worst:.2e} over 50 inputs)");
}

// ---------------------------------------------------------------------------
// criterion 5: combinatorics exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_combinatorics_exactness() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let params = CompositionParams::default();
    let backgrounds = synth::make_background_pool(2, 55);

    let cases = [
        (Scenario::Initial, 5usize, 40usize),
        (Scenario::Initial, 8, 64),
        (Scenario::Initial, 10, 80),
        (Scenario::Extended, 5, 60),
        (Scenario::Extended, 10, 120),
        (Scenario::Extended, 15, 180),
    ];
    for (scenario, per_combination, expected) in cases {
        let cutouts = synth::make_cutout_pool(scenario, 3, 77);
        let spec = ScenarioSpec {
            scenario,
            per_combination,
            seed: 99,
        };
        let dir = tmp
            .path()
            .join(format!("{}_{per_combination}", scenario.name()));
        let out = generate_dataset(&spec, &cutouts, &backgrounds, &params, &dir, 0).unwrap();
        assert_eq!(out.manifest.samples.len(), expected);
        let counts = out.manifest.combination_counts();
        assert_eq!(counts.len(), scenario.combination_count());
        assert!(
            counts.values().all(|&v| v == per_combination),
            "unbalanced: {counts:?}"
        );
    }

    // byte-identical regeneration, one size per scenario
    for (scenario, per_combination) in [(Scenario::Initial, 5usize), (Scenario::Extended, 5)] {
        let cutouts = synth::make_cutout_pool(scenario, 3, 77);
        let spec = ScenarioSpec {
            scenario,
            per_combination,
            seed: 1234,
        };
        let dir_a = tmp.path().join(format!("re_a_{}", scenario.name()));
        let dir_b = tmp.path().join(format!("re_b_{}", scenario.name()));
        let a = generate_dataset(&spec, &cutouts, &backgrounds, &params, &dir_a, 0).unwrap();
        let b = generate_dataset(&spec, &cutouts, &backgrounds, &params, &dir_b, 1).unwrap();
        assert_eq!(
            std::fs::read(&a.manifest_path).unwrap(),
            std::fs::read(&b.manifest_path).unwrap()
        );
        for sample in &a.manifest.samples {
            assert_eq!(
                std::fs::read(dir_a.join(&sample.relative_path)).unwrap(),
                std::fs::read(dir_b.join(&sample.relative_path)).unwrap(),
                "image bytes differ for {:?}",
                sample.relative_path
            );
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "acceptance 05 combinatorics-exactness: PASS (40/64/80 + 60/120/180 balanced, regeneration byte-identical, {elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// criteria 6 and 7: desk-scale reproduction
// ---------------------------------------------------------------------------

struct DeskRun {
    accuracy: f64,
    final_train_loss: f64,
}

fn desk_scale_run(
    scenario: Scenario,
    per_combination: usize,
    test_size: usize,
    train_seeds: &[u64],
) -> Vec<DeskRun> {
    let tmp = tempfile::tempdir().unwrap();
    let data_seed = 2024u64;
    let backbone_path = ensure_builtin_backbone(&tmp.path().join("cache")).unwrap();

    // user-supplied cutouts: 12 synthetic dishes per condition
    let pool = synth::make_cutout_pool(scenario, 12, data_seed);
    let (train_pool, val_pool) = split_cutout_pool(&pool, 0.75, data_seed).unwrap();
    let backgrounds = synth::make_background_pool(4, data_seed + 1);
    let spec = ScenarioSpec {
        scenario,
        per_combination,
        seed: data_seed,
    };
    let params = CompositionParams::default();

    let train_dir = tmp.path().join("train-data");
    let test_dir = tmp.path().join("test-data");
    let train_out =
        generate_dataset(&spec, &train_pool, &backgrounds, &params, &train_dir, 0).unwrap();
    let test_out = build_test_set(
        &spec,
        &val_pool,
        &backgrounds,
        test_size,
        &params,
        &test_dir,
        0,
    )
    .unwrap();

    // no cutout leaks across the split
    let train_ids: std::collections::BTreeSet<&str> =
        train_out.manifest.cutout_ids().into_iter().collect();
    for id in test_out.manifest.cutout_ids() {
        assert!(
            !train_ids.contains(id),
            "cutout {id} leaked into the test set"
        );
    }

    let seg_cfg = SegmenterConfig::default();
    let ckpt = OracleBackend::identity_checkpoint(&tmp.path().join("seg")).unwrap();
    let pre_train_dir = tmp.path().join("pre-train");
    let pre_test_dir = tmp.path().join("pre-test");
    let backend_train = OracleBackend::from_annotations(
        &AnnotationSet::load_dir(&train_dir.join("annotations")).unwrap(),
    )
    .unwrap();
    let backend_test = OracleBackend::from_annotations(
        &AnnotationSet::load_dir(&test_dir.join("annotations")).unwrap(),
    )
    .unwrap();
    let pre_train = preprocess_manifest(
        &train_out.manifest,
        &train_dir,
        &backend_train,
        &ckpt,
        &seg_cfg,
        CLASSIFIER_FILL,
        &pre_train_dir,
    )
    .unwrap();
    let pre_test = preprocess_manifest(
        &test_out.manifest,
        &test_dir,
        &backend_test,
        &ckpt,
        &seg_cfg,
        CLASSIFIER_FILL,
        &pre_test_dir,
    )
    .unwrap();
    assert!(pre_train.skipped.is_empty());
    assert!(pre_test.skipped.is_empty());

    train_seeds
        .iter()
        .map(|&seed| {
            let mut model = build_model(&backbone_path, scenario.class_count(), seed).unwrap();
            freeze_backbone(&mut model);
            let cfg = TrainConfig {
                class_count: scenario.class_count(),
                seed,
                ..TrainConfig::default()
            };
            let report = classifier::train(
                &mut model,
                &pre_train.manifest,
                &pre_train_dir,
                &pre_test.manifest,
                &pre_test_dir,
                &cfg,
            )
            .unwrap();
            assert_eq!(report.epochs.len(), 50);
            DeskRun {
                accuracy: report.best_val_accuracy,
                final_train_loss: report.final_train_loss,
            }
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

#[test]
fn criterion_06_initial_scenario_desk_scale() {
    let started = Instant::now();
    let runs = desk_scale_run(Scenario::Initial, 10, 120, &[0, 1, 2]);
    let mut accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let mut losses: Vec<f64> = runs.iter().map(|r| r.final_train_loss).collect();
    let median_acc = median(&mut accs);
    let median_loss = median(&mut losses);
    assert!(
        median_acc >= 0.80,
        "median accuracy {median_acc} below 0.80"
    );
    assert!(
        median_loss <= 0.10,
        "median final training loss {median_loss} above 0.10"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 900.0, "took {elapsed:?}");
    println!(
        "acceptance 06 initial-scenario: PASS (3-seed median accuracy {median_acc:.4} >= 0.80, median final train loss {median_loss:.4} <= 0.10, {elapsed:?})"
    );
}

#[test]
fn criterion_07_extended_scenario_desk_scale() {
    let started = Instant::now();
    let runs = desk_scale_run(Scenario::Extended, 15, 180, &[0, 1, 2]);
    let mut accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let median_acc = median(&mut accs);
    assert!(
        median_acc >= 0.78,
        "median accuracy {median_acc} below 0.78"
    );
    let elapsed = started.elapsed();
    println!(
        "acceptance 07 extended-scenario: PASS (3-seed median accuracy {median_acc:.4} >= 0.78, {elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// criterion 8: MMD properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_mmd_properties() {
    // zero on identical sets, symmetry
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let cloud: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let other: Vec<Vec<f64>> = (0..25)
        .map(|_| (0..8).map(|_| rng.random_range(0.0..2.0)).collect())
        .collect();
    let self_mmd = mmd_estimate(&cloud, &cloud).unwrap();
    assert!(self_mmd.abs() <= 1e-9, "self MMD {self_mmd}");
    let ab = mmd_estimate(&cloud, &other).unwrap();
    let ba = mmd_estimate(&other, &cloud).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    assert!(ab >= 0.0);

    // masked <= unmasked ordering on forged data, 5 seeded trials
    let tmp = tempfile::tempdir().unwrap();
    let backbone_path = ensure_builtin_backbone(&tmp.path().join("cache")).unwrap();
    let backbone = Backbone::load(&backbone_path).unwrap();
    let mut holds = 0;
    let mut detail = Vec::new();
    for trial in 0..5u64 {
        let result = domain_gap_trial(&backbone, 3000 + trial).unwrap();
        if result.mmd_masked <= result.mmd_unmasked {
            holds += 1;
        }
        detail.push(format!(
            "{:.4}<={:.4}",
            result.mmd_masked, result.mmd_unmasked
        ));
    }
    assert!(holds >= 4, "ordering held only {holds}/5: {detail:?}");
    println!(
        "acceptance 08 mmd-properties: PASS (self 0 within 1e-9, symmetric, ordering {holds}/5: {})",
        detail.join(", ")
    );
}

// ---------------------------------------------------------------------------
// criterion 9: complexity arithmetic
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_complexity_arithmetic() {
    // published component values compose to ~186.0 GFLOPs
    let remover_gflops =
        count_gflops(&dishwatch_core::profiler::mask_remover_desc(), (640, 640)).unwrap();
    let mk = |name: &str, gflops: f64, mem: Option<f64>| ComponentCost {
        component: name.into(),
        gflops,
        memory_gb: mem,
        input_px: (640, 640),
        batch_size: 16,
    };
    let costs = vec![
        mk("segmentation", 118.6, Some(16.3)),
        mk("mask_remover", remover_gflops, Some(0.1)),
        mk("classifier", 67.4, Some(1.0)),
    ];
    let total = total_pipeline_gflops(&costs).unwrap();
    assert!((total - 186.0).abs() < 0.01, "total {total}");

    let peak = peak_pipeline_memory(&costs).unwrap();
    assert_eq!(peak, 16.3);

    // native analytic count of the reference backbone+head at 640x640
    let native = count_gflops(&resnet50_fc_head(3), (640, 640)).unwrap();
    assert!(
        (native - 67.4).abs() <= 0.1 * 67.4,
        "native {native} not within 10% of 67.4"
    );
    println!(
        "acceptance 09 complexity-arithmetic: PASS (sum {total:.4} ~= 186.0, peak {peak}, native {native:.3} GFLOPs within 10% of 67.4)"
    );
}

// ---------------------------------------------------------------------------
// criterion 10: mask-removal exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_mask_removal_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for case in 0..50 {
        let w = rng.random_range(8..80);
        let h = rng.random_range(8..80);
        let mut img = Image::new(w, h, Channels::Rgb).unwrap();
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(
                    x,
                    y,
                    [
                        rng.random::<u8>(),
                        rng.random::<u8>(),
                        rng.random::<u8>(),
                        255,
                    ],
                );
            }
        }
        let mut mask = BinaryMask::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                mask.set(x, y, rng.random::<bool>());
            }
        }
        let out = remove_background(&img, &mask, FillPolicy::Default).unwrap();

        // brute-force per-pixel oracle, byte for byte
        let mut expected = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                let p = if mask.get(x, y) {
                    img.pixel(x, y)
                } else {
                    [0, 0, 0, 255]
                };
                expected.extend_from_slice(&p[..3]);
            }
        }
        assert_eq!(out.data(), &expected[..], "case {case} ({w}x{h})");
    }
    println!("acceptance 10 mask-removal-exactness: PASS (50 random image/mask pairs byte-exact)");
}
