//! A small trainable backend: per-pixel logistic regression on color and
//! position features, optimized with Adam under the weighted composite loss.
//!
//! The box is derived from the predicted mask rather than from a separate
//! regression head, so box-loss reduction rides on mask-loss descent; the
//! reported totals always combine all three components with the configured
//! weights. Useful as a fast stand-in where a full prototype-mask model is
//! not warranted, and as the statistical validation target for the
//! fine-tuning contract.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    composite_loss, Checkpoint, Detection, FinetuneReport, LossComponents, LossTracePoint,
    SegmentationBackend, SegmentationResult, SegmenterConfig, SegmenterError,
};
use crate::imaging::{load_image, BinaryMask, Image};

const FEATURE_DIM: usize = 9;
const PIXELS_PER_ITER: usize = 256;
const MIN_COMPONENT_AREA: usize = 16;
const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogisticWeights {
    backend: String,
    version: u32,
    weights: Vec<f64>,
}

pub struct LogisticBackend {
    seed: u64,
}

impl LogisticBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn features(img: &Image, x: u32, y: u32) -> [f64; FEATURE_DIM] {
    let p = img.pixel(x, y);
    let r = p[0] as f64 / 255.0;
    let g = p[1] as f64 / 255.0;
    let b = p[2] as f64 / 255.0;
    [
        1.0,
        r,
        g,
        b,
        r * r,
        g * g,
        b * b,
        x as f64 / img.width() as f64,
        y as f64 / img.height() as f64,
    ]
}

fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

/// Normalized (cx, cy, w, h) of a mask's bounding box; empty masks map to a
/// degenerate centered box.
fn normalized_box(mask: &BinaryMask) -> [f64; 4] {
    match mask.bounding_box() {
        Some((x0, y0, x1, y1)) => {
            let w = mask.width() as f64;
            let h = mask.height() as f64;
            [
                (x0 + x1 + 1) as f64 / 2.0 / w,
                (y0 + y1 + 1) as f64 / 2.0 / h,
                (x1 - x0 + 1) as f64 / w,
                (y1 - y0 + 1) as f64 / h,
            ]
        }
        None => [0.5, 0.5, 0.0, 0.0],
    }
}

fn box_loss(predicted: [f64; 4], target: [f64; 4]) -> f64 {
    predicted
        .iter()
        .zip(target.iter())
        .map(|(p, t)| smooth_l1(p - t))
        .sum()
}

struct TrainImage {
    image: Image,
    union_mask: BinaryMask,
    has_object: bool,
    gt_box: [f64; 4],
}

struct Adam {
    m: [f64; FEATURE_DIM],
    v: [f64; FEATURE_DIM],
    t: u64,
}

impl Adam {
    fn new() -> Self {
        Self {
            m: [0.0; FEATURE_DIM],
            v: [0.0; FEATURE_DIM],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64; FEATURE_DIM], grad: &[f64; FEATURE_DIM], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        for i in 0..FEATURE_DIM {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - B1.powi(self.t as i32));
            let v_hat = self.v[i] / (1.0 - B2.powi(self.t as i32));
            w[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Evaluate component losses for one image on a coarse pixel grid.
fn evaluate_components(w: &[f64; FEATURE_DIM], item: &TrainImage) -> LossComponents {
    let img = &item.image;
    let stride = (((img.width() as f64 * img.height() as f64) / 1024.0)
        .sqrt()
        .ceil() as u32)
        .max(1);
    let mut mask_sum = 0.0;
    let mut count = 0usize;
    let mut max_p = 0.0f64;
    let mut pred = BinaryMask::new(img.width(), img.height()).unwrap();
    for y in (0..img.height()).step_by(stride as usize) {
        for x in (0..img.width()).step_by(stride as usize) {
            let phi = features(img, x, y);
            let p = sigmoid(phi.iter().zip(w.iter()).map(|(a, b)| a * b).sum());
            mask_sum += bce(p, item.union_mask.get(x, y) as u8 as f64);
            count += 1;
            max_p = max_p.max(p);
            if p > 0.5 {
                pred.set(x, y, true);
            }
        }
    }
    let l_mask = mask_sum / count.max(1) as f64;
    let l_cls = bce(max_p, item.has_object as u8 as f64);
    let l_box = if item.has_object {
        box_loss(normalized_box(&pred), item.gt_box)
    } else {
        0.0
    };
    LossComponents {
        cls: l_cls,
        box_: l_box,
        mask: l_mask,
    }
}

impl SegmentationBackend for LogisticBackend {
    fn id(&self) -> &'static str {
        "logistic"
    }

    fn is_trainable(&self) -> bool {
        true
    }

    fn finetune(
        &mut self,
        dataset: &super::AnnotationSet,
        cfg: &SegmenterConfig,
        out_dir: &Path,
    ) -> Result<FinetuneReport, SegmenterError> {
        if dataset.images().is_empty() {
            return Err(SegmenterError::EmptyDataset);
        }
        let mut items = Vec::with_capacity(dataset.images().len());
        for ann in dataset.images() {
            let image = load_image(&ann.image_path)?;
            let mut union_mask = BinaryMask::new(ann.width, ann.height)?;
            for m in &ann.masks {
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        if m.get(x, y) {
                            union_mask.set(x, y, true);
                        }
                    }
                }
            }
            let has_object = !union_mask.is_empty();
            let gt_box = normalized_box(&union_mask);
            items.push(TrainImage {
                image,
                union_mask,
                has_object,
                gt_box,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut w = [0.0f64; FEATURE_DIM];
        let mut adam = Adam::new();
        let mut trace = Vec::new();
        let trace_every = (cfg.iterations / 100).max(1);

        for it in 0..cfg.iterations {
            let item = &items[it as usize % items.len()];
            let img = &item.image;
            let mut grad = [0.0f64; FEATURE_DIM];
            let mut max_p = f64::MIN;
            let mut max_phi = [0.0f64; FEATURE_DIM];
            for _ in 0..PIXELS_PER_ITER {
                let x = rng.random_range(0..img.width());
                let y = rng.random_range(0..img.height());
                let phi = features(img, x, y);
                let p = sigmoid(phi.iter().zip(w.iter()).map(|(a, b)| a * b).sum());
                let target = item.union_mask.get(x, y) as u8 as f64;
                let d = cfg.loss_weights.mask * (p - target) / PIXELS_PER_ITER as f64;
                for i in 0..FEATURE_DIM {
                    grad[i] += d * phi[i];
                }
                if p > max_p {
                    max_p = p;
                    max_phi = phi;
                }
            }
            // objectness rides on the most confident sampled pixel
            let d_cls = cfg.loss_weights.cls * (max_p - item.has_object as u8 as f64);
            for i in 0..FEATURE_DIM {
                grad[i] += d_cls * max_phi[i];
            }
            adam.step(&mut w, &grad, cfg.learning_rate);

            if it % trace_every == 0 || it + 1 == cfg.iterations {
                let comps = evaluate_components(&w, item);
                trace.push(LossTracePoint {
                    iteration: it,
                    cls: comps.cls,
                    box_: comps.box_,
                    mask: comps.mask,
                    total: composite_loss(comps, cfg.loss_weights),
                });
            }
        }

        // final loss: mean composite over the dataset
        let final_loss = items
            .iter()
            .map(|item| composite_loss(evaluate_components(&w, item), cfg.loss_weights))
            .sum::<f64>()
            / items.len() as f64;

        std::fs::create_dir_all(out_dir).map_err(|e| SegmenterError::Io {
            path: out_dir.to_path_buf(),
            source: e,
        })?;
        let ckpt_path = out_dir.join("logistic.ckpt.json");
        let payload = LogisticWeights {
            backend: "logistic".into(),
            version: 1,
            weights: w.to_vec(),
        };
        std::fs::write(&ckpt_path, serde_json::to_vec_pretty(&payload).unwrap()).map_err(|e| {
            SegmenterError::Io {
                path: ckpt_path.clone(),
                source: e,
            }
        })?;
        let checkpoint = Checkpoint::describe("logistic", &ckpt_path)?;
        Ok(FinetuneReport {
            checkpoint,
            trace,
            final_loss,
        })
    }

    fn segment(
        &self,
        checkpoint: &Checkpoint,
        img: &Image,
        cfg: &SegmenterConfig,
    ) -> Result<SegmentationResult, SegmenterError> {
        let bytes = checkpoint.read_verified()?;
        let payload: LogisticWeights =
            serde_json::from_slice(&bytes).map_err(|e| SegmenterError::CheckpointMissing {
                path: checkpoint.path.clone(),
                reason: format!("unparseable checkpoint: {e}"),
            })?;
        if payload.weights.len() != FEATURE_DIM {
            return Err(SegmenterError::CheckpointMissing {
                path: checkpoint.path.clone(),
                reason: format!(
                    "expected {FEATURE_DIM} weights, found {}",
                    payload.weights.len()
                ),
            });
        }
        let mut w = [0.0f64; FEATURE_DIM];
        w.copy_from_slice(&payload.weights);

        let (width, height) = (img.width(), img.height());
        let mut probs = vec![0.0f64; (width * height) as usize];
        let mut fg = BinaryMask::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                let phi = features(img, x, y);
                let p = sigmoid(phi.iter().zip(w.iter()).map(|(a, b)| a * b).sum());
                probs[(y * width + x) as usize] = p;
                if p > 0.5 {
                    fg.set(x, y, true);
                }
            }
        }

        // 4-connected components over the thresholded map
        let mut visited = vec![false; (width * height) as usize];
        let mut detections = Vec::new();
        for sy in 0..height {
            for sx in 0..width {
                let si = (sy * width + sx) as usize;
                if !fg.get(sx, sy) || visited[si] {
                    continue;
                }
                let mut mask = BinaryMask::new(width, height)?;
                let mut queue = VecDeque::from([(sx, sy)]);
                visited[si] = true;
                let mut area = 0usize;
                let mut conf_sum = 0.0;
                while let Some((x, y)) = queue.pop_front() {
                    mask.set(x, y, true);
                    area += 1;
                    conf_sum += probs[(y * width + x) as usize];
                    let neighbors = [
                        (x.wrapping_sub(1), y),
                        (x + 1, y),
                        (x, y.wrapping_sub(1)),
                        (x, y + 1),
                    ];
                    for (nx, ny) in neighbors {
                        if nx < width && ny < height {
                            let ni = (ny * width + nx) as usize;
                            if fg.get(nx, ny) && !visited[ni] {
                                visited[ni] = true;
                                queue.push_back((nx, ny));
                            }
                        }
                    }
                }
                let confidence = conf_sum / area as f64;
                if area >= MIN_COMPONENT_AREA && confidence >= cfg.confidence_threshold {
                    detections.push(Detection {
                        mask,
                        confidence,
                        label: "dish".to_string(),
                    });
                }
            }
        }
        Ok(SegmentationResult::new(detections))
    }
}
