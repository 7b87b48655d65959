//! Balanced dataset generation over (dish condition, background condition)
//! combinations.
//!
//! Alongside each composite the forge writes a ground-truth annotation (mask
//! PNG + JSON record) capturing exactly where the dish was placed, so the
//! oracle segmentation backend can drive the mask remover over forged data
//! without a heavy model.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use super::{
    compose, derive_stream, BackgroundPool, CompositionParams, CutoutPool, DatasetManifest,
    ForgeError, ManifestHeader, ScenarioSpec, TOOL_VERSION,
};
use crate::imaging::{save_image, BackgroundCondition, DishCondition, LabeledSample, Split};
use crate::segmenter::{AnnotatedObject, AnnotationRecord};

const MAX_PLACEMENT_ATTEMPTS: u32 = 100;

#[derive(Debug)]
pub struct ForgeOutput {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub dataset_dir: PathBuf,
}

/// Forge the training split: exactly `|dish| x |background| x per_combination`
/// composites from the given cutout pool.
pub fn generate_dataset(
    spec: &ScenarioSpec,
    cutouts: &CutoutPool,
    backgrounds: &BackgroundPool,
    params: &CompositionParams,
    out_dir: &Path,
    jobs: usize,
) -> Result<ForgeOutput, ForgeError> {
    forge_split(
        spec,
        cutouts,
        backgrounds,
        params,
        out_dir,
        Split::Train,
        spec.per_combination,
        jobs,
    )
}

/// Forge a balanced test split of `size` images from the validation cutout
/// pool. `size` must divide evenly across the scenario's combinations.
pub fn build_test_set(
    spec: &ScenarioSpec,
    val_cutouts: &CutoutPool,
    backgrounds: &BackgroundPool,
    size: usize,
    params: &CompositionParams,
    out_dir: &Path,
    jobs: usize,
) -> Result<ForgeOutput, ForgeError> {
    let combos = spec.scenario.combination_count();
    if !size.is_multiple_of(combos) {
        return Err(ForgeError::IndivisibleSize {
            size,
            combinations: combos,
        });
    }
    forge_split(
        spec,
        val_cutouts,
        backgrounds,
        params,
        out_dir,
        Split::Test,
        size / combos,
        jobs,
    )
}

#[allow(clippy::too_many_arguments)]
fn forge_split(
    spec: &ScenarioSpec,
    cutouts: &CutoutPool,
    backgrounds: &BackgroundPool,
    params: &CompositionParams,
    out_dir: &Path,
    split: Split,
    per_combination: usize,
    jobs: usize,
) -> Result<ForgeOutput, ForgeError> {
    params.validate()?;
    let dish_conditions = spec.scenario.dish_conditions();
    for &dish in dish_conditions {
        if cutouts.of_condition(dish).is_empty() {
            return Err(ForgeError::MissingConditionPool {
                kind: "cutouts".to_string(),
                condition: dish.to_string(),
            });
        }
    }
    for bg in BackgroundCondition::ALL {
        if backgrounds.of_condition(bg).is_empty() {
            return Err(ForgeError::MissingConditionPool {
                kind: "backgrounds".to_string(),
                condition: bg.to_string(),
            });
        }
    }

    let images_dir = out_dir.join("images");
    let ann_dir = out_dir.join("annotations");
    let masks_dir = ann_dir.join("masks");
    for dir in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(dir).map_err(|e| ForgeError::Io {
            path: dir.clone(),
            source: e,
        })?;
    }

    struct Task {
        combination: u32,
        index: u32,
        dish: DishCondition,
        background: BackgroundCondition,
    }
    let mut tasks = Vec::new();
    for (ci, &dish) in dish_conditions.iter().enumerate() {
        for (bi, &background) in BackgroundCondition::ALL.iter().enumerate() {
            let combination = (ci * BackgroundCondition::ALL.len() + bi) as u32;
            for index in 0..per_combination {
                tasks.push(Task {
                    combination,
                    index: index as u32,
                    dish,
                    background,
                });
            }
        }
    }

    let run = |task: &Task| -> Result<LabeledSample, ForgeError> {
        let (mut rng, stream_id) = derive_stream(spec.seed, split, task.combination, task.index);
        let dish_pool = cutouts.of_condition(task.dish);
        let bg_pool = backgrounds.of_condition(task.background);
        let cutout = dish_pool[rng.random_range(0..dish_pool.len())];
        let background = bg_pool[rng.random_range(0..bg_pool.len())];

        // rejection-sample augmentations until the rotated cutout fits
        let mut attempt = 0;
        let (image, mask) = loop {
            match compose(&cutout.image, &background.image, params, &mut rng) {
                Ok(done) => break done,
                Err(ForgeError::CutoutTooLarge { .. }) if attempt < MAX_PLACEMENT_ATTEMPTS => {
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };

        let stem = format!("{}_{}_{:03}", task.dish, task.background, task.index);
        let image_rel = PathBuf::from("images").join(format!("{stem}.png"));
        save_image(&image, &out_dir.join(&image_rel))?;

        let mask_rel = PathBuf::from("masks").join(format!("{stem}.png"));
        mask.save_png(&ann_dir.join(&mask_rel))?;
        let record = AnnotationRecord {
            image: PathBuf::from("../images").join(format!("{stem}.png")),
            width: image.width(),
            height: image.height(),
            objects: vec![AnnotatedObject {
                class_name: "dish".to_string(),
                polygon: None,
                mask: Some(mask_rel),
            }],
        };
        let ann_path = ann_dir.join(format!("{stem}.json"));
        std::fs::write(&ann_path, serde_json::to_vec_pretty(&record).unwrap()).map_err(|e| {
            ForgeError::Io {
                path: ann_path.clone(),
                source: e,
            }
        })?;

        Ok(LabeledSample {
            relative_path: image_rel,
            dish_condition: task.dish,
            background_condition: task.background,
            split,
            source_cutout_id: cutout.id.clone(),
            combination_index: task.combination,
            rng_stream_id: stream_id,
        })
    };

    let results: Vec<Result<LabeledSample, ForgeError>> = if jobs == 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs) // 0 means rayon default
            .build()
            .expect("thread pool");
        pool.install(|| tasks.par_iter().map(run).collect())
    };
    let mut samples = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    samples.sort_by(|a, b| {
        (a.combination_index, &a.relative_path).cmp(&(b.combination_index, &b.relative_path))
    });

    let manifest = DatasetManifest {
        header: ManifestHeader {
            scenario: spec.scenario,
            seed: spec.seed,
            tool_version: TOOL_VERSION.to_string(),
            preprocessed: false,
            params: *params,
        },
        samples,
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    Ok(ForgeOutput {
        manifest,
        manifest_path,
        dataset_dir: out_dir.to_path_buf(),
    })
}
