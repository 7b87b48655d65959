//! Declarative pipeline configuration (TOML). Every value has a default;
//! command-line flags override whatever the file says.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use dishwatch_core::forge::{CompositionParams, Scenario, ScenarioSpec};
use dishwatch_core::segmenter::{FillPolicy, LossWeights, SegmenterConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub paths: PathsConfig,
    pub scenario: ScenarioConfig,
    pub composition: CompositionConfig,
    pub segmenter: SegmenterSection,
    pub train: TrainSection,
    pub preprocess: PreprocessSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_root: PathBuf::from("runs/default"),
            paths: PathsConfig::default(),
            scenario: ScenarioConfig::default(),
            composition: CompositionConfig::default(),
            segmenter: SegmenterSection::default(),
            train: TrainSection::default(),
            preprocess: PreprocessSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub cutouts_dir: PathBuf,
    pub backgrounds_dir: PathBuf,
    /// Annotated dish photographs for segmentation fine-tuning.
    pub annotations_dir: PathBuf,
    /// Pre-trained backbone weights cache; the DISHWATCH_WEIGHTS_DIR
    /// environment variable overrides it.
    pub weights_cache: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            cutouts_dir: PathBuf::from("data/cutouts"),
            backgrounds_dir: PathBuf::from("data/backgrounds"),
            annotations_dir: PathBuf::from("data/annotations"),
            weights_cache: PathBuf::from(".dishwatch-cache"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub kind: String,
    pub per_combination: usize,
    pub test_size: usize,
    /// Fraction of cutouts assigned to the training pool.
    pub train_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: "initial".to_string(),
            per_combination: 10,
            test_size: 120,
            train_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositionConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        let p = CompositionParams::default();
        Self {
            scale_min: p.scale_range.0,
            scale_max: p.scale_range.1,
            rotation_min_deg: p.rotation_range_deg.0,
            rotation_max_deg: p.rotation_range_deg.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterSection {
    pub backend: String,
    pub learning_rate: f64,
    pub iterations: u32,
    pub confidence_threshold: f64,
    pub w_cls: f64,
    pub w_box: f64,
    pub w_mask: f64,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        let c = SegmenterConfig::default();
        Self {
            backend: "oracle".to_string(),
            learning_rate: c.learning_rate,
            iterations: c.iterations,
            confidence_threshold: c.confidence_threshold,
            w_cls: c.loss_weights.cls,
            w_box: c.loss_weights.box_,
            w_mask: c.loss_weights.mask,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 5e-4,
            epochs: 50,
            batch_size: 16,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSection {
    /// gray | black | transparent | default
    pub fill: String,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            fill: "gray".to_string(),
        }
    }
}

impl PipelineConfig {
    /// Load a config file. Relative paths inside it resolve against the
    /// file's own directory, so a config travels with its data.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            config.anchor(base);
        }
        Ok(config)
    }

    fn anchor(&mut self, base: &Path) {
        for p in [
            &mut self.output_root,
            &mut self.paths.cutouts_dir,
            &mut self.paths.backgrounds_dir,
            &mut self.paths.annotations_dir,
            &mut self.paths.weights_cache,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)
            .with_context(|| format!("cannot write config {}", path.display()))?;
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::parse(&self.scenario.kind)
            .with_context(|| format!("unknown scenario '{}'", self.scenario.kind))
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        Ok(ScenarioSpec {
            scenario: self.scenario()?,
            per_combination: self.scenario.per_combination,
            seed: self.seed,
        })
    }

    pub fn composition_params(&self) -> CompositionParams {
        CompositionParams {
            scale_range: (self.composition.scale_min, self.composition.scale_max),
            rotation_range_deg: (
                self.composition.rotation_min_deg,
                self.composition.rotation_max_deg,
            ),
        }
    }

    pub fn segmenter_config(&self) -> SegmenterConfig {
        SegmenterConfig {
            loss_weights: LossWeights {
                cls: self.segmenter.w_cls,
                box_: self.segmenter.w_box,
                mask: self.segmenter.w_mask,
            },
            learning_rate: self.segmenter.learning_rate,
            iterations: self.segmenter.iterations,
            confidence_threshold: self.segmenter.confidence_threshold,
        }
    }

    pub fn fill_policy(&self) -> Result<FillPolicy> {
        match self.preprocess.fill.as_str() {
            "gray" => Ok(dishwatch_core::pipeline::CLASSIFIER_FILL),
            "black" => Ok(FillPolicy::Black),
            "transparent" => Ok(FillPolicy::Transparent),
            "default" => Ok(FillPolicy::Default),
            other => anyhow::bail!("unknown fill policy '{other}'"),
        }
    }

    /// Weights cache with the environment override applied.
    pub fn weights_cache(&self) -> PathBuf {
        std::env::var_os("DISHWATCH_WEIGHTS_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.paths.weights_cache.clone())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root.clone()
    }
}
