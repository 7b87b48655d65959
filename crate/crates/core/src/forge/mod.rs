//! Synthetic dataset forging: augmented dish cutouts composited onto
//! weather-condition backgrounds with exact per-combination balance and
//! disjoint train/validation cutout pools.
//!
//! Every stochastic choice flows from a per-image RNG stream derived by
//! hashing (seed, split, combination index, image index), so regeneration
//! with the same seed is byte-identical and parallel generation is
//! order-independent.

mod compose;
mod generate;

pub use compose::{compose, resize_background, FORGED_IMAGE_SIZE};
pub use generate::{build_test_set, generate_dataset, ForgeOutput};

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{
    load_image, BackgroundCondition, Channels, DishCondition, Image, ImagingError, LabeledSample,
    Split,
};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("InsufficientCutouts: condition '{condition}' has {found} cutouts, need at least 2")]
    InsufficientCutouts { condition: String, found: usize },
    #[error("MissingConditionPool: no {kind} available for condition '{condition}'")]
    MissingConditionPool { kind: String, condition: String },
    #[error("CutoutTooLarge: scaled cutout {w}x{h} exceeds the {size}x{size} frame")]
    CutoutTooLarge { w: u32, h: u32, size: u32 },
    #[error("IndivisibleSize: {size} images cannot balance {combinations} combinations")]
    IndivisibleSize { size: usize, combinations: usize },
    #[error("ManifestParse: {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },
    #[error("ManifestInvalid: {0}")]
    ManifestInvalid(String),
    #[error("CutoutNotRgba: {path} has no alpha channel")]
    CutoutNotRgba { path: PathBuf },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Classification scenario: two dish classes or three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Initial,
    Extended,
}

impl Scenario {
    pub fn dish_conditions(self) -> &'static [DishCondition] {
        match self {
            Scenario::Initial => &[DishCondition::Snow, DishCondition::Normal],
            Scenario::Extended => &[
                DishCondition::Snow,
                DishCondition::Wet,
                DishCondition::Normal,
            ],
        }
    }

    pub fn class_count(self) -> usize {
        self.dish_conditions().len()
    }

    /// Dish conditions crossed with the four background conditions.
    pub fn combination_count(self) -> usize {
        self.class_count() * BackgroundCondition::ALL.len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Initial => "initial",
            Scenario::Extended => "extended",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "initial" => Some(Scenario::Initial),
            "extended" => Some(Scenario::Extended),
            _ => None,
        }
    }
}

/// What to forge: scenario, per-combination count, and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub per_combination: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn dataset_size(&self) -> usize {
        self.scenario.combination_count() * self.per_combination
    }
}

/// Augmentation ranges for compositing. Scale is the fraction of the
/// background width the cutout will occupy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionParams {
    pub scale_range: (f64, f64),
    pub rotation_range_deg: (f64, f64),
}

impl Default for CompositionParams {
    fn default() -> Self {
        Self {
            scale_range: (0.4, 0.8),
            rotation_range_deg: (-30.0, 30.0),
        }
    }
}

impl CompositionParams {
    pub fn validate(&self) -> Result<(), ForgeError> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(ForgeError::ManifestInvalid(format!(
                "scale range ({lo}, {hi}) must satisfy 0 < min <= max"
            )));
        }
        Ok(())
    }
}

/// A background-free dish image with alpha, the unit of data forging.
#[derive(Debug, Clone)]
pub struct Cutout {
    pub id: String,
    pub condition: DishCondition,
    pub image: Image,
}

/// Cutouts grouped by dish condition.
#[derive(Debug, Clone, Default)]
pub struct CutoutPool {
    cutouts: Vec<Cutout>,
}

impl CutoutPool {
    pub fn new(cutouts: Vec<Cutout>) -> Self {
        Self { cutouts }
    }

    pub fn cutouts(&self) -> &[Cutout] {
        &self.cutouts
    }

    pub fn len(&self) -> usize {
        self.cutouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cutouts.is_empty()
    }

    pub fn of_condition(&self, condition: DishCondition) -> Vec<&Cutout> {
        self.cutouts
            .iter()
            .filter(|c| c.condition == condition)
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.cutouts.iter().map(|c| c.id.as_str()).collect()
    }

    /// Load `<dir>/<condition>/*.png` as RGBA cutouts; ids are
    /// `<condition>/<file-stem>`.
    pub fn load_dir(dir: &Path) -> Result<Self, ForgeError> {
        let mut cutouts = Vec::new();
        for condition in [
            DishCondition::Snow,
            DishCondition::Wet,
            DishCondition::Normal,
        ] {
            let sub = dir.join(condition.as_str());
            if !sub.is_dir() {
                continue;
            }
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&sub)
                .map_err(|e| ForgeError::Io {
                    path: sub.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
                .collect();
            paths.sort();
            for path in paths {
                let image = load_image(&path)?;
                if image.channels() != Channels::Rgba {
                    return Err(ForgeError::CutoutNotRgba { path });
                }
                let stem = path.file_stem().unwrap().to_string_lossy().to_string();
                cutouts.push(Cutout {
                    id: format!("{}/{stem}", condition.as_str()),
                    condition,
                    image,
                });
            }
        }
        Ok(Self { cutouts })
    }
}

/// One background scene with its weather condition.
#[derive(Debug, Clone)]
pub struct BackgroundImage {
    pub id: String,
    pub condition: BackgroundCondition,
    pub image: Image,
}

#[derive(Debug, Clone, Default)]
pub struct BackgroundPool {
    backgrounds: Vec<BackgroundImage>,
}

impl BackgroundPool {
    pub fn new(backgrounds: Vec<BackgroundImage>) -> Self {
        Self { backgrounds }
    }

    pub fn of_condition(&self, condition: BackgroundCondition) -> Vec<&BackgroundImage> {
        self.backgrounds
            .iter()
            .filter(|b| b.condition == condition)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.backgrounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backgrounds.is_empty()
    }

    /// Load `<dir>/<condition>/*.{png,jpg,jpeg}`.
    pub fn load_dir(dir: &Path) -> Result<Self, ForgeError> {
        let mut backgrounds = Vec::new();
        for condition in BackgroundCondition::ALL {
            let sub = dir.join(condition.as_str());
            if !sub.is_dir() {
                continue;
            }
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&sub)
                .map_err(|e| ForgeError::Io {
                    path: sub.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("png") | Some("jpg") | Some("jpeg")
                    )
                })
                .collect();
            paths.sort();
            for path in paths {
                let image = load_image(&path)?;
                let stem = path.file_stem().unwrap().to_string_lossy().to_string();
                backgrounds.push(BackgroundImage {
                    id: format!("{}/{stem}", condition.as_str()),
                    condition,
                    image,
                });
            }
        }
        Ok(Self { backgrounds })
    }
}

/// Split a cutout pool into disjoint train/validation pools. Every dish
/// condition present lands in both pools.
pub fn split_cutout_pool(
    pool: &CutoutPool,
    fraction: f64,
    seed: u64,
) -> Result<(CutoutPool, CutoutPool), ForgeError> {
    let mut by_condition: BTreeMap<DishCondition, Vec<&Cutout>> = BTreeMap::new();
    for c in pool.cutouts() {
        by_condition.entry(c.condition).or_default().push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (condition, mut members) in by_condition {
        if members.len() < 2 {
            return Err(ForgeError::InsufficientCutouts {
                condition: condition.to_string(),
                found: members.len(),
            });
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        for (i, c) in members.into_iter().enumerate() {
            if i < n_train {
                train.push(c.clone());
            } else {
                val.push(c.clone());
            }
        }
    }
    Ok((CutoutPool::new(train), CutoutPool::new(val)))
}

/// Manifest header line; the rest of the file is one sample per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub scenario: Scenario,
    pub seed: u64,
    pub tool_version: String,
    /// True once every image in the manifest has been through the mask
    /// remover (or was composited from background-free sources onto plain
    /// fill). Training requires it.
    pub preprocessed: bool,
    pub params: CompositionParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLine {
    Header(ManifestHeader),
    Sample(LabeledSample),
}

/// Balanced, labeled, split-assigned record of every forged sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub samples: Vec<LabeledSample>,
}

impl DatasetManifest {
    /// Write as line-delimited JSON records, header first.
    pub fn save(&self, path: &Path) -> Result<(), ForgeError> {
        let file = std::fs::File::create(path).map_err(|e| ForgeError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut out = std::io::BufWriter::new(file);
        let mut write_line = |line: &ManifestLine| -> Result<(), ForgeError> {
            serde_json::to_writer(&mut out, line).map_err(|e| ForgeError::ManifestParse {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            out.write_all(b"\n").map_err(|e| ForgeError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        };
        write_line(&ManifestLine::Header(self.header.clone()))?;
        for sample in &self.samples {
            write_line(&ManifestLine::Sample(sample.clone()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForgeError> {
        let file = std::fs::File::open(path).map_err(|e| ForgeError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let reader = BufReader::new(file);
        let mut header = None;
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ForgeError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine =
                serde_json::from_str(&line).map_err(|e| ForgeError::ManifestParse {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
            match parsed {
                ManifestLine::Header(h) => header = Some(h),
                ManifestLine::Sample(s) => samples.push(s),
            }
        }
        let header = header.ok_or_else(|| ForgeError::ManifestParse {
            path: path.to_path_buf(),
            reason: "missing header line".to_string(),
        })?;
        Ok(Self { header, samples })
    }

    /// Per-(dish, background) sample counts.
    pub fn combination_counts(&self) -> BTreeMap<(DishCondition, BackgroundCondition), usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts
                .entry((s.dish_condition, s.background_condition))
                .or_insert(0) += 1;
        }
        counts
    }

    /// Check balance and that every referenced image exists under
    /// `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<(), ForgeError> {
        if self.samples.is_empty() {
            return Err(ForgeError::ManifestInvalid("no samples".to_string()));
        }
        for s in &self.samples {
            let p = base_dir.join(&s.relative_path);
            if !p.is_file() {
                return Err(ForgeError::ManifestInvalid(format!(
                    "missing image {}",
                    p.display()
                )));
            }
        }
        let counts = self.combination_counts();
        let mut values = counts.values();
        if let Some(&first) = values.next() {
            if values.any(|&v| v != first) {
                return Err(ForgeError::ManifestInvalid(format!(
                    "unbalanced combinations: {counts:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn cutout_ids(&self) -> Vec<&str> {
        self.samples
            .iter()
            .map(|s| s.source_cutout_id.as_str())
            .collect()
    }
}

/// Per-image RNG stream: hash of (seed, split, combination, index). The
/// resulting stream id is recorded in the manifest.
pub(crate) fn derive_stream(
    seed: u64,
    split: Split,
    combination: u32,
    index: u32,
) -> (ChaCha8Rng, String) {
    let split_tag: u8 = match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    };
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([split_tag]);
    hasher.update(combination.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let id: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    (ChaCha8Rng::from_seed(key), id)
}

pub(crate) const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;

    fn pool_with(counts: &[(DishCondition, usize)]) -> CutoutPool {
        let mut cutouts = Vec::new();
        for &(condition, n) in counts {
            for i in 0..n {
                cutouts.push(Cutout {
                    id: format!("{condition}/{i}"),
                    condition,
                    image: Image::new(4, 4, Channels::Rgba).unwrap(),
                });
            }
        }
        CutoutPool::new(cutouts)
    }

    #[test]
    fn scenario_combinatorics() {
        assert_eq!(Scenario::Initial.combination_count(), 8);
        assert_eq!(Scenario::Extended.combination_count(), 12);
        let spec = ScenarioSpec {
            scenario: Scenario::Initial,
            per_combination: 5,
            seed: 0,
        };
        assert_eq!(spec.dataset_size(), 40);
    }

    #[test]
    fn split_cardinality() {
        let pool = pool_with(&[(DishCondition::Snow, 10)]);
        let (train, val) = split_cutout_pool(&pool, 0.8, 1).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        let train_ids: Vec<_> = train.ids();
        assert!(val.ids().iter().all(|id| !train_ids.contains(id)));
    }

    #[test]
    fn split_minimal_two_per_condition() {
        let pool = pool_with(&[(DishCondition::Snow, 2), (DishCondition::Normal, 2)]);
        let (train, val) = split_cutout_pool(&pool, 0.5, 3).unwrap();
        for condition in [DishCondition::Snow, DishCondition::Normal] {
            assert_eq!(train.of_condition(condition).len(), 1);
            assert_eq!(val.of_condition(condition).len(), 1);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let pool = pool_with(&[(DishCondition::Snow, 7), (DishCondition::Normal, 5)]);
        let (t1, v1) = split_cutout_pool(&pool, 0.7, 99).unwrap();
        let (t2, v2) = split_cutout_pool(&pool, 0.7, 99).unwrap();
        assert_eq!(t1.ids(), t2.ids());
        assert_eq!(v1.ids(), v2.ids());
    }

    #[test]
    fn split_rejects_single_cutout_condition() {
        let pool = pool_with(&[(DishCondition::Snow, 1), (DishCondition::Normal, 4)]);
        assert!(matches!(
            split_cutout_pool(&pool, 0.5, 0),
            Err(ForgeError::InsufficientCutouts { .. })
        ));
    }

    #[test]
    fn stream_derivation_is_stable_and_distinct() {
        let (_, id_a) = derive_stream(7, Split::Train, 0, 0);
        let (_, id_a2) = derive_stream(7, Split::Train, 0, 0);
        let (_, id_b) = derive_stream(7, Split::Train, 0, 1);
        let (_, id_c) = derive_stream(7, Split::Test, 0, 0);
        assert_eq!(id_a, id_a2);
        assert_ne!(id_a, id_b);
        assert_ne!(id_a, id_c);
    }

    #[test]
    fn manifest_roundtrips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            header: ManifestHeader {
                scenario: Scenario::Initial,
                seed: 5,
                tool_version: TOOL_VERSION.to_string(),
                preprocessed: false,
                params: CompositionParams::default(),
            },
            samples: vec![LabeledSample {
                relative_path: "images/snow_sunny_000.png".into(),
                dish_condition: DishCondition::Snow,
                background_condition: BackgroundCondition::Sunny,
                split: Split::Train,
                source_cutout_id: "snow/0".into(),
                combination_index: 0,
                rng_stream_id: "00aa".into(),
            }],
        };
        let path = dir.path().join("manifest.jsonl");
        manifest.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded, manifest);
    }
}
