//! Oracle backend: replays ground-truth masks from annotation files.
//!
//! Images are matched by a content hash of their pixel data, so the oracle
//! needs no side channel to know which annotation belongs to which image.
//! Every pipeline correctness obligation in this module is checked against
//! this backend.

use std::collections::HashMap;
use std::path::Path;

use super::{
    hex_digest, AnnotationSet, Checkpoint, Detection, FinetuneReport, SegmentationBackend,
    SegmentationResult, SegmenterConfig, SegmenterError,
};
use crate::imaging::{load_image, BinaryMask, Image};

pub struct OracleBackend {
    by_content: HashMap<String, Vec<BinaryMask>>,
}

fn content_key(img: &Image) -> String {
    let mut bytes = Vec::with_capacity(img.data().len() + 8);
    bytes.extend_from_slice(&img.width().to_le_bytes());
    bytes.extend_from_slice(&img.height().to_le_bytes());
    bytes.extend_from_slice(img.data());
    hex_digest(&bytes)
}

impl OracleBackend {
    /// Index the annotated images by pixel content.
    pub fn from_annotations(set: &AnnotationSet) -> Result<Self, SegmenterError> {
        let mut by_content = HashMap::new();
        for ann in set.images() {
            let img = load_image(&ann.image_path)?;
            by_content.insert(content_key(&img), ann.masks.clone());
        }
        Ok(Self { by_content })
    }

    /// Write the no-op checkpoint the oracle runs from.
    pub fn identity_checkpoint(out_dir: &Path) -> Result<Checkpoint, SegmenterError> {
        std::fs::create_dir_all(out_dir).map_err(|e| SegmenterError::Io {
            path: out_dir.to_path_buf(),
            source: e,
        })?;
        let path = out_dir.join("oracle.ckpt.json");
        std::fs::write(&path, b"{\"backend\":\"oracle\"}\n").map_err(|e| SegmenterError::Io {
            path: path.clone(),
            source: e,
        })?;
        Checkpoint::describe("oracle", &path)
    }
}

impl SegmentationBackend for OracleBackend {
    fn id(&self) -> &'static str {
        "oracle"
    }

    fn is_trainable(&self) -> bool {
        false
    }

    fn finetune(
        &mut self,
        _dataset: &AnnotationSet,
        _cfg: &SegmenterConfig,
        _out_dir: &Path,
    ) -> Result<FinetuneReport, SegmenterError> {
        Err(SegmenterError::BackendNotTrainable("oracle".into()))
    }

    fn segment(
        &self,
        checkpoint: &Checkpoint,
        img: &Image,
        _cfg: &SegmenterConfig,
    ) -> Result<SegmentationResult, SegmenterError> {
        checkpoint.read_verified()?;
        let masks = self.by_content.get(&content_key(img));
        let detections = masks
            .map(|ms| {
                ms.iter()
                    .map(|m| Detection {
                        mask: m.clone(),
                        confidence: 1.0,
                        label: "dish".to_string(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(SegmentationResult::new(detections))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{save_image, Channels};
    use crate::segmenter::{select_object_of_interest, AnnotatedImage};
    use tempfile::tempdir;

    fn disk_mask(w: u32, h: u32, cx: i64, cy: i64, r: i64) -> BinaryMask {
        let mut m = BinaryMask::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                let dx = x as i64 - cx;
                let dy = y as i64 - cy;
                if dx * dx + dy * dy <= r * r {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn fixture(dir: &Path, name: &str, masks: Vec<BinaryMask>) -> (Image, AnnotatedImage) {
        let mut img = Image::new(40, 30, Channels::Rgb).unwrap();
        for (i, b) in name.bytes().enumerate() {
            img.set_pixel(i as u32 % 40, 0, [b, b, b, 255]);
        }
        let path = dir.join(format!("{name}.png"));
        save_image(&img, &path).unwrap();
        let img = load_image(&path).unwrap();
        let ann = AnnotatedImage {
            image_path: path,
            width: 40,
            height: 30,
            masks,
        };
        (img, ann)
    }

    #[test]
    fn oracle_returns_exact_annotated_mask() {
        let dir = tempdir().unwrap();
        let mask = disk_mask(40, 30, 20, 15, 8);
        let (img, ann) = fixture(dir.path(), "one", vec![mask.clone()]);
        let backend =
            OracleBackend::from_annotations(&AnnotationSet::from_images(vec![ann])).unwrap();
        let ckpt = OracleBackend::identity_checkpoint(dir.path()).unwrap();
        let result = backend
            .segment(&ckpt, &img, &SegmenterConfig::default())
            .unwrap();
        assert_eq!(result.detections().len(), 1);
        assert_eq!(result.detections()[0].confidence, 1.0);
        assert_eq!(result.detections()[0].mask, mask);
        // the full segment -> select pipeline equals ground truth
        assert_eq!(select_object_of_interest(&result).unwrap(), mask);
    }

    #[test]
    fn unannotated_image_yields_no_detections() {
        let dir = tempdir().unwrap();
        let (_, ann) = fixture(dir.path(), "known", vec![disk_mask(40, 30, 10, 10, 4)]);
        let backend =
            OracleBackend::from_annotations(&AnnotationSet::from_images(vec![ann])).unwrap();
        let ckpt = OracleBackend::identity_checkpoint(dir.path()).unwrap();
        let mut other = Image::new(40, 30, Channels::Rgb).unwrap();
        other.set_pixel(5, 5, [9, 9, 9, 255]);
        let result = backend
            .segment(&ckpt, &other, &SegmenterConfig::default())
            .unwrap();
        assert!(result.is_empty());
    }

    #[test]
    fn two_annotated_dishes_yield_two_detections() {
        let dir = tempdir().unwrap();
        let m1 = disk_mask(40, 30, 10, 15, 5);
        let m2 = disk_mask(40, 30, 30, 15, 7);
        let (img, ann) = fixture(dir.path(), "two", vec![m1, m2.clone()]);
        let backend =
            OracleBackend::from_annotations(&AnnotationSet::from_images(vec![ann])).unwrap();
        let ckpt = OracleBackend::identity_checkpoint(dir.path()).unwrap();
        let result = backend
            .segment(&ckpt, &img, &SegmenterConfig::default())
            .unwrap();
        assert_eq!(result.detections().len(), 2);
        assert!(result.detections()[0].confidence >= result.detections()[1].confidence);
        // equal confidence: selection falls back to the larger mask
        assert_eq!(select_object_of_interest(&result).unwrap(), m2);
    }

    #[test]
    fn finetune_on_oracle_is_rejected() {
        let dir = tempdir().unwrap();
        let (_, ann) = fixture(dir.path(), "x", vec![disk_mask(40, 30, 10, 10, 4)]);
        let set = AnnotationSet::from_images(vec![ann]);
        let mut backend = OracleBackend::from_annotations(&set).unwrap();
        let err =
            crate::segmenter::finetune(&mut backend, &set, &SegmenterConfig::default(), dir.path())
                .unwrap_err();
        assert!(matches!(err, SegmenterError::BackendNotTrainable(_)));
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let dir = tempdir().unwrap();
        let (img, ann) = fixture(dir.path(), "y", vec![disk_mask(40, 30, 10, 10, 4)]);
        let backend =
            OracleBackend::from_annotations(&AnnotationSet::from_images(vec![ann])).unwrap();
        let ckpt = Checkpoint {
            backend: "oracle".into(),
            path: dir.path().join("absent.ckpt.json"),
            sha256: "0".repeat(64),
        };
        assert!(matches!(
            backend.segment(&ckpt, &img, &SegmenterConfig::default()),
            Err(SegmenterError::CheckpointMissing { .. })
        ));
    }
}
