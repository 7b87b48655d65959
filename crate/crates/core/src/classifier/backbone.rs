//! Frozen convolutional feature extractor.
//!
//! The backbone is loaded from a weights file and never trained here; the
//! built-in `dw-micro-2048` network is a compact four-stage filter bank
//! (structured color/edge filters plus seeded random projections) emitting a
//! 2048-dimensional L2-normalized embedding, the same feature width a
//! ResNet50-class extractor reports. Heavier backbones can be swapped in by
//! pointing the weights cache at a file with the same tensor layout.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::{file_sha256, Tensor, TensorData, TensorFile};
use super::ClassifierError;
use crate::imaging::{resize, Image};
use crate::profiler::LayerDesc;

pub const BUILTIN_BACKBONE_ID: &str = "dw-micro-2048";
pub const BUILTIN_BACKBONE_FILE: &str = "dw-micro-2048.dwb";
const BUILTIN_SEED: u64 = 0x_d15b_cafe;

#[derive(Debug, Clone)]
pub struct ConvStage {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    /// (out_ch, in_ch * 9) im2col weight matrix for 3x3 kernels.
    weight: Array2<f32>,
    bias: Vec<f32>,
}

impl ConvStage {
    pub fn weight_tensor(&self) -> Tensor {
        Tensor {
            name: format!("{}.weight", self.name),
            shape: vec![self.out_ch, self.in_ch, 3, 3],
            data: TensorData::F32(self.weight.iter().copied().collect()),
        }
    }

    pub fn bias_tensor(&self) -> Tensor {
        Tensor {
            name: format!("{}.bias", self.name),
            shape: vec![self.out_ch],
            data: TensorData::F32(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub id: String,
    stages: Vec<ConvStage>,
    pub feature_dim: usize,
    /// Inputs are resized to this square before the first convolution.
    pub stem_size: u32,
    /// Final adaptive average pool grid (grid x grid per channel).
    pub pool_grid: usize,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
    pub source_path: PathBuf,
    pub source_sha256: String,
}

impl Backbone {
    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let tf = TensorFile::load(path)?;
        let meta = &tf.meta;
        let id = meta["id"]
            .as_str()
            .ok_or_else(|| bad_meta(path, "id"))?
            .to_string();
        let stem_size = meta["stem_size"]
            .as_u64()
            .ok_or_else(|| bad_meta(path, "stem_size"))? as u32;
        let pool_grid = meta["pool_grid"]
            .as_u64()
            .ok_or_else(|| bad_meta(path, "pool_grid"))? as usize;
        let read3 = |key: &str| -> Result<[f32; 3], ClassifierError> {
            let arr = meta[key].as_array().ok_or_else(|| bad_meta(path, key))?;
            if arr.len() != 3 {
                return Err(bad_meta(path, key));
            }
            let mut out = [0f32; 3];
            for (i, v) in arr.iter().enumerate() {
                out[i] = v.as_f64().ok_or_else(|| bad_meta(path, key))? as f32;
            }
            Ok(out)
        };
        let norm_mean = read3("norm_mean")?;
        let norm_std = read3("norm_std")?;
        let stage_names: Vec<String> = meta["stages"]
            .as_array()
            .ok_or_else(|| bad_meta(path, "stages"))?
            .iter()
            .map(|v| v.as_str().unwrap_or_default().to_string())
            .collect();

        let mut stages = Vec::with_capacity(stage_names.len());
        for name in stage_names {
            let w = tf
                .get(&format!("{name}.weight"))
                .ok_or_else(|| bad_meta(path, &format!("{name}.weight")))?;
            let b = tf
                .get(&format!("{name}.bias"))
                .ok_or_else(|| bad_meta(path, &format!("{name}.bias")))?;
            let (out_ch, in_ch) = (w.shape[0], w.shape[1]);
            let weight = Array2::from_shape_vec(
                (out_ch, in_ch * 9),
                w.data
                    .as_f32()
                    .ok_or_else(|| bad_meta(path, "dtype"))?
                    .to_vec(),
            )
            .map_err(|e| ClassifierError::WeightsParse {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
            stages.push(ConvStage {
                name,
                in_ch,
                out_ch,
                weight,
                bias: b
                    .data
                    .as_f32()
                    .ok_or_else(|| bad_meta(path, "dtype"))?
                    .to_vec(),
            });
        }
        let last_ch = stages.last().map(|s| s.out_ch).unwrap_or(0);
        let feature_dim = last_ch * pool_grid * pool_grid;
        Ok(Self {
            id,
            stages,
            feature_dim,
            stem_size,
            pool_grid,
            norm_mean,
            norm_std,
            source_path: path.to_path_buf(),
            source_sha256: file_sha256(path)?,
        })
    }

    pub fn stages(&self) -> &[ConvStage] {
        &self.stages
    }

    /// Forward pass: resize to the stem, normalize with the stored
    /// statistics, run the conv/pool stack, and L2-normalize the pooled
    /// embedding. Deterministic for identical inputs.
    pub fn extract(&self, img: &Image) -> Result<Vec<f32>, ClassifierError> {
        let stem = resize(img, self.stem_size, self.stem_size).map_err(ClassifierError::from)?;
        let hw = self.stem_size as usize;
        let mut x = Array3::<f32>::zeros((3, hw, hw));
        for y in 0..hw {
            for xx in 0..hw {
                let p = stem.pixel(xx as u32, y as u32);
                for c in 0..3 {
                    x[[c, y, xx]] = (p[c] as f32 / 255.0 - self.norm_mean[c]) / self.norm_std[c];
                }
            }
        }

        let mut h = hw;
        for stage in &self.stages {
            let col = im2col_3x3(&x, h);
            let mut out = stage.weight.dot(&col); // (out_ch, h*h)
            for (mut row, &b) in out.rows_mut().into_iter().zip(stage.bias.iter()) {
                row.mapv_inplace(|v| (v + b).max(0.0));
            }
            // 2x2 average pool, stride 2
            let pooled_h = h / 2;
            let mut pooled = Array3::<f32>::zeros((stage.out_ch, pooled_h, pooled_h));
            for c in 0..stage.out_ch {
                for py in 0..pooled_h {
                    for px in 0..pooled_h {
                        let (y0, x0) = (py * 2, px * 2);
                        let s = out[[c, y0 * h + x0]]
                            + out[[c, y0 * h + x0 + 1]]
                            + out[[c, (y0 + 1) * h + x0]]
                            + out[[c, (y0 + 1) * h + x0 + 1]];
                        pooled[[c, py, px]] = s * 0.25;
                    }
                }
            }
            x = pooled;
            h = pooled_h;
        }

        // adaptive average pool to the final grid, then flatten and L2-normalize
        let grid = self.pool_grid;
        let channels = x.shape()[0];
        let mut features = vec![0f32; channels * grid * grid];
        for c in 0..channels {
            for gy in 0..grid {
                for gx in 0..grid {
                    let y0 = gy * h / grid;
                    let y1 = ((gy + 1) * h / grid).max(y0 + 1);
                    let x0 = gx * h / grid;
                    let x1 = ((gx + 1) * h / grid).max(x0 + 1);
                    let mut sum = 0f32;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            sum += x[[c, y, xx]];
                        }
                    }
                    features[c * grid * grid + gy * grid + gx] =
                        sum / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
        // normalize to unit RMS per component (vector norm sqrt(D)), the
        // working scale of a large pooled extractor
        let norm = features.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            let target = (features.len() as f32).sqrt();
            for v in &mut features {
                *v = *v / norm * target;
            }
        }
        Ok(features)
    }

    /// Layer shapes for analytic complexity accounting, at a given square
    /// input size. The stem resize halves nothing; convolutions run at the
    /// stem resolution with a 2x pool after each stage.
    pub fn complexity_layers(&self) -> Vec<LayerDesc> {
        let mut layers = Vec::new();
        for stage in &self.stages {
            layers.push(LayerDesc::Conv2d {
                name: format!("{}.conv", stage.name),
                in_channels: stage.in_ch,
                out_channels: stage.out_ch,
                kernel: 3,
                stride: 1,
                padding: 1,
            });
            layers.push(LayerDesc::Pool {
                name: format!("{}.pool", stage.name),
                kernel: 2,
                stride: 2,
                padding: 0,
            });
        }
        layers.push(LayerDesc::GlobalAvgPool {
            name: "pool_grid".to_string(),
            output_grid: self.pool_grid,
        });
        layers
    }
}

fn bad_meta(path: &Path, key: &str) -> ClassifierError {
    ClassifierError::WeightsParse {
        path: path.to_path_buf(),
        reason: format!("missing or invalid metadata field '{key}'"),
    }
}

/// im2col for 3x3 kernels with padding 1: rows are (channel, ky, kx), columns
/// are output positions.
fn im2col_3x3(x: &Array3<f32>, h: usize) -> Array2<f32> {
    let channels = x.shape()[0];
    let mut col = Array2::<f32>::zeros((channels * 9, h * h));
    for c in 0..channels {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..h {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= h as isize {
                            continue;
                        }
                        col[[row, y * h + xx]] = x[[c, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    col
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate the built-in backbone weights file. The first stage mixes fixed
/// color-passthrough and derivative filters with seeded random projections;
/// later stages are seeded random filter banks at He scale. Generation is
/// fully deterministic.
pub fn generate_builtin_backbone(path: &Path) -> Result<(), ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(BUILTIN_SEED);
    let plan: [(usize, usize); 4] = [(3, 16), (16, 32), (32, 64), (64, 128)];
    let mut tensors = Vec::new();
    let mut stage_names = Vec::new();

    for (i, &(in_ch, out_ch)) in plan.iter().enumerate() {
        let name = format!("stage{}", i + 1);
        let mut w = vec![0f32; out_ch * in_ch * 9];
        let he = (2.0 / (in_ch as f64 * 9.0)).sqrt();
        for v in &mut w {
            *v = (normal(&mut rng) * he) as f32;
        }
        if i == 0 {
            // structured filters: color taps, luminance, derivatives
            let set = |w: &mut [f32], f: usize, c: usize, ky: usize, kx: usize, v: f32| {
                w[f * in_ch * 9 + c * 9 + ky * 3 + kx] = v;
            };
            for f in 0..8 {
                for idx in 0..in_ch * 9 {
                    w[f * in_ch * 9 + idx] = 0.0;
                }
            }
            // color taps scaled to sit alongside the He-initialized bank
            set(&mut w, 0, 0, 1, 1, 0.4); // R
            set(&mut w, 1, 1, 1, 1, 0.4); // G
            set(&mut w, 2, 2, 1, 1, 0.4); // B
            for (c, lv) in [(0usize, 0.30f32), (1, 0.59), (2, 0.11)] {
                set(&mut w, 3, c, 1, 1, lv * 0.7); // luminance
            }
            let sobel_x = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
            let sobel_y = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
            let laplace = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
            let diag = [1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0];
            for (f, kernel) in [(4usize, sobel_x), (5, sobel_y), (6, laplace), (7, diag)] {
                for (c, lv) in [(0usize, 0.30f32), (1, 0.59), (2, 0.11)] {
                    for (k, tap) in kernel.iter().enumerate() {
                        set(&mut w, f, c, k / 3, k % 3, tap * lv * 0.5);
                    }
                }
            }
        }
        tensors.push(Tensor {
            name: format!("{name}.weight"),
            shape: vec![out_ch, in_ch, 3, 3],
            data: TensorData::F32(w),
        });
        tensors.push(Tensor {
            name: format!("{name}.bias"),
            shape: vec![out_ch],
            data: TensorData::F32(vec![0.0; out_ch]),
        });
        stage_names.push(name);
    }

    let tf = TensorFile {
        meta: serde_json::json!({
            "id": BUILTIN_BACKBONE_ID,
            "stem_size": 96,
            "pool_grid": 4,
            "norm_mean": [0.485, 0.456, 0.406],
            "norm_std": [0.229, 0.224, 0.225],
            "stages": stage_names,
        }),
        tensors,
    };
    tf.save(path)
}

/// Return the cached built-in backbone weights, generating them on first use.
pub fn ensure_builtin_backbone(cache_dir: &Path) -> Result<PathBuf, ClassifierError> {
    std::fs::create_dir_all(cache_dir).map_err(|e| ClassifierError::Io {
        path: cache_dir.to_path_buf(),
        source: e,
    })?;
    let path = cache_dir.join(BUILTIN_BACKBONE_FILE);
    if !path.is_file() {
        generate_builtin_backbone(&path)?;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Channels;
    use tempfile::tempdir;

    fn test_backbone() -> Backbone {
        let dir = tempdir().unwrap();
        let path = ensure_builtin_backbone(dir.path()).unwrap();
        Backbone::load(&path).unwrap()
    }

    #[test]
    fn builtin_backbone_reports_2048_features() {
        let backbone = test_backbone();
        assert_eq!(backbone.feature_dim, 2048);
        assert_eq!(backbone.id, BUILTIN_BACKBONE_ID);
    }

    #[test]
    fn generation_is_deterministic() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.dwb");
        let b = dir.path().join("b.dwb");
        generate_builtin_backbone(&a).unwrap();
        generate_builtin_backbone(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn identical_inputs_give_identical_features() {
        let backbone = test_backbone();
        let mut img = Image::new(300, 300, Channels::Rgb).unwrap();
        for y in 0..300 {
            for x in 0..300 {
                img.set_pixel(x, y, [(x % 256) as u8, (y % 256) as u8, 120, 255]);
            }
        }
        let f1 = backbone.extract(&img).unwrap();
        let f2 = backbone.extract(&img).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.len(), 2048);
        assert!(f1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn different_inputs_give_different_features() {
        let backbone = test_backbone();
        let zeros = Image::new(64, 64, Channels::Rgb).unwrap();
        let mut ones = Image::new(64, 64, Channels::Rgb).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                ones.set_pixel(x, y, [255, 255, 255, 255]);
            }
        }
        let fz = backbone.extract(&zeros).unwrap();
        let fo = backbone.extract(&ones).unwrap();
        assert_ne!(fz, fo);
    }

    #[test]
    fn features_have_unit_rms() {
        let backbone = test_backbone();
        let mut img = Image::new(128, 128, Channels::Rgb).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                img.set_pixel(x, y, [200, (x * 2) as u8, (y * 2) as u8, 255]);
            }
        }
        let f = backbone.extract(&img).unwrap();
        let rms: f32 = (f.iter().map(|v| v * v).sum::<f32>() / f.len() as f32).sqrt();
        assert!((rms - 1.0).abs() < 1e-3, "rms {rms}");
    }
}
