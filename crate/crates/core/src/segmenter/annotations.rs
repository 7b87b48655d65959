//! Ground-truth annotation files.
//!
//! One JSON document per annotated image:
//!
//! ```json
//! {
//!   "image": "photos/dish_01.png",
//!   "width": 300,
//!   "height": 300,
//!   "objects": [
//!     { "class": "dish", "polygon": [[120.0, 80.0], [210.0, 80.0], [210.0, 170.0], [120.0, 170.0]] },
//!     { "class": "dish", "mask": "masks/dish_01_b.png" }
//!   ]
//! }
//! ```
//!
//! Each object carries either a `polygon` (list of `[x, y]` vertices,
//! rasterized with the even-odd rule at pixel centers) or a `mask` path to a
//! single-channel PNG with values {0, 255}. All paths are relative to the
//! annotation file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SegmenterError;
use crate::imaging::BinaryMask;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatedObject {
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
}

/// A parsed annotation with object masks materialized at image resolution.
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    /// Absolute path of the annotated image.
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<BinaryMask>,
}

/// All annotations loaded from a directory of `*.json` files.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    images: Vec<AnnotatedImage>,
}

impl AnnotationSet {
    pub fn images(&self) -> &[AnnotatedImage] {
        &self.images
    }

    pub fn from_images(images: Vec<AnnotatedImage>) -> Self {
        Self { images }
    }

    /// Load every `*.json` annotation under `dir` (sorted by file name).
    pub fn load_dir(dir: &Path) -> Result<Self, SegmenterError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| SegmenterError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
            .collect();
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        for path in paths {
            images.push(load_annotation_file(&path)?);
        }
        Ok(Self { images })
    }
}

/// Parse one annotation file and rasterize its objects.
pub fn load_annotation_file(path: &Path) -> Result<AnnotatedImage, SegmenterError> {
    let text = std::fs::read_to_string(path).map_err(|e| SegmenterError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let record: AnnotationRecord =
        serde_json::from_str(&text).map_err(|e| SegmenterError::AnnotationParse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut masks = Vec::with_capacity(record.objects.len());
    for (i, obj) in record.objects.iter().enumerate() {
        let mask = match (&obj.polygon, &obj.mask) {
            (Some(poly), None) => rasterize_polygon(poly, record.width, record.height),
            (None, Some(rel)) => {
                let mask = BinaryMask::load_png(&base.join(rel))?;
                if mask.width() != record.width || mask.height() != record.height {
                    return Err(SegmenterError::AnnotationParse {
                        path: path.to_path_buf(),
                        reason: format!(
                            "object {i}: mask {}x{} does not match image {}x{}",
                            mask.width(),
                            mask.height(),
                            record.width,
                            record.height
                        ),
                    });
                }
                mask
            }
            _ => {
                return Err(SegmenterError::AnnotationParse {
                    path: path.to_path_buf(),
                    reason: format!("object {i}: exactly one of 'polygon' or 'mask' required"),
                })
            }
        };
        masks.push(mask);
    }
    Ok(AnnotatedImage {
        image_path: base.join(&record.image),
        width: record.width,
        height: record.height,
        masks,
    })
}

/// Rasterize a polygon with the even-odd rule, testing pixel centers.
pub fn rasterize_polygon(vertices: &[[f64; 2]], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width.max(1), height.max(1)).unwrap();
    if vertices.len() < 3 {
        return mask;
    }
    let n = vertices.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(8);
    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            if (a[1] <= yc) != (b[1] <= yc) {
                let t = (yc - a[1]) / (b[1] - a[1]);
                crossings.push(a[0] + t * (b[0] - a[0]));
            }
        }
        crossings.sort_by(|p, q| p.total_cmp(q));
        for pair in crossings.chunks_exact(2) {
            let (x_enter, x_exit) = (pair[0], pair[1]);
            let start = (x_enter - 0.5).ceil().max(0.0) as i64;
            let end = ((x_exit - 0.5).ceil() as i64).min(width as i64);
            for x in start..end {
                mask.set(x as u32, y, true);
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{save_image, Channels, Image};
    use tempfile::tempdir;

    #[test]
    fn rectangle_polygon_fills_exact_pixels() {
        let poly = [[10.0, 10.0], [20.0, 10.0], [20.0, 20.0], [10.0, 20.0]];
        let mask = rasterize_polygon(&poly, 30, 30);
        assert_eq!(mask.popcount(), 100);
        assert_eq!(mask.bounding_box(), Some((10, 10, 19, 19)));
    }

    /// Brute-force even-odd point-in-polygon check, written independently of
    /// the scanline filler.
    fn point_in_polygon(vertices: &[[f64; 2]], px: f64, py: f64) -> bool {
        let mut inside = false;
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            if (a[1] <= py) != (b[1] <= py) {
                let x = a[0] + (py - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if px < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    #[test]
    fn rasterization_matches_point_in_polygon_oracle() {
        // non-convex pentagon
        let poly = [
            [3.0, 2.0],
            [25.0, 5.0],
            [15.0, 14.0],
            [27.0, 25.0],
            [5.0, 27.0],
        ];
        let mask = rasterize_polygon(&poly, 32, 32);
        for y in 0..32u32 {
            for x in 0..32u32 {
                let expected = point_in_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5);
                assert_eq!(mask.get(x, y), expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn annotation_file_roundtrip_with_polygon_and_mask() {
        let dir = tempdir().unwrap();
        let img = Image::new(16, 12, Channels::Rgb).unwrap();
        save_image(&img, &dir.path().join("photo.png")).unwrap();

        let mut obj_mask = BinaryMask::new(16, 12).unwrap();
        obj_mask.set(1, 1, true);
        obj_mask.save_png(&dir.path().join("obj.png")).unwrap();

        let record = AnnotationRecord {
            image: "photo.png".into(),
            width: 16,
            height: 12,
            objects: vec![
                AnnotatedObject {
                    class_name: "dish".into(),
                    polygon: Some(vec![[2.0, 2.0], [9.0, 2.0], [9.0, 8.0], [2.0, 8.0]]),
                    mask: None,
                },
                AnnotatedObject {
                    class_name: "dish".into(),
                    polygon: None,
                    mask: Some("obj.png".into()),
                },
            ],
        };
        let ann_path = dir.path().join("photo.json");
        std::fs::write(&ann_path, serde_json::to_string_pretty(&record).unwrap()).unwrap();

        let loaded = load_annotation_file(&ann_path).unwrap();
        assert_eq!(loaded.masks.len(), 2);
        assert_eq!(loaded.masks[0].popcount(), 7 * 6);
        assert_eq!(loaded.masks[1].popcount(), 1);

        let set = AnnotationSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.images().len(), 1);
    }

    #[test]
    fn malformed_annotation_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            load_annotation_file(&path),
            Err(SegmenterError::AnnotationParse { .. })
        ));
    }
}
