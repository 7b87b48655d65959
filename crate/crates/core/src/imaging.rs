//! Raster primitives and the label vocabulary shared by every pipeline stage.
//!
//! Pixel storage is 8-bit RGB or RGBA. All geometric operations use bilinear
//! interpolation and are deterministic: equal inputs yield byte-equal outputs.
//! Classification-time conversion to normalized floats happens in the
//! classifier, keeping this layer free of any model backend.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("UnreadableFile: {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("UnsupportedFormat: {path}: expected PNG or JPEG")]
    UnsupportedFormat { path: PathBuf },
    #[error("InvalidDimensions: {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("NonPositiveScale: {0}")]
    NonPositiveScale(f64),
    #[error("DimensionMismatch: image {image_w}x{image_h} vs mask {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("ChannelMismatch: expected {expected} channels, got {got}")]
    ChannelMismatch { expected: u8, got: u8 },
}

/// Channel layout of an [`Image`]. Only 8-bit RGB and RGBA are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channels {
    Rgb,
    Rgba,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Rgb => 3,
            Channels::Rgba => 4,
        }
    }
}

/// An 8-bit raster image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: Channels,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: Channels) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        let len = width as usize * height as usize * channels.count();
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0; len],
        })
    }

    pub fn from_raw(
        width: u32,
        height: u32,
        channels: Channels,
        data: Vec<u8>,
    ) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize * channels.count();
        if data.len() != expected {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels.count()
    }

    /// Pixel as RGBA; RGB images report alpha 255.
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let o = self.offset(x, y);
        match self.channels {
            Channels::Rgb => [self.data[o], self.data[o + 1], self.data[o + 2], 255],
            Channels::Rgba => [
                self.data[o],
                self.data[o + 1],
                self.data[o + 2],
                self.data[o + 3],
            ],
        }
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgba: [u8; 4]) {
        let o = self.offset(x, y);
        match self.channels {
            Channels::Rgb => {
                self.data[o] = rgba[0];
                self.data[o + 1] = rgba[1];
                self.data[o + 2] = rgba[2];
            }
            Channels::Rgba => {
                self.data[o..o + 4].copy_from_slice(&rgba);
            }
        }
    }

    /// Copy into an RGBA image; RGB inputs become fully opaque.
    pub fn to_rgba(&self) -> Image {
        match self.channels {
            Channels::Rgba => self.clone(),
            Channels::Rgb => {
                let mut out = Image::new(self.width, self.height, Channels::Rgba).unwrap();
                for y in 0..self.height {
                    for x in 0..self.width {
                        out.set_pixel(x, y, self.pixel(x, y));
                    }
                }
                out
            }
        }
    }

    /// Drop the alpha channel; alpha is discarded, not composited.
    pub fn to_rgb(&self) -> Image {
        match self.channels {
            Channels::Rgb => self.clone(),
            Channels::Rgba => {
                let mut out = Image::new(self.width, self.height, Channels::Rgb).unwrap();
                for y in 0..self.height {
                    for x in 0..self.width {
                        let p = self.pixel(x, y);
                        out.set_pixel(x, y, [p[0], p[1], p[2], 255]);
                    }
                }
                out
            }
        }
    }
}

/// One boolean per pixel; dimensions match the image the mask annotates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || bits.len() != width as usize * height as usize {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of set pixels.
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.popcount() == 0
    }

    /// Tight bounding box of set pixels as (x0, y0, x1, y1), inclusive.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }

    /// Persist as a single-channel PNG with values {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let buf: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width, self.height, buf).unwrap();
        img.save(path).map_err(|e| ImagingError::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Load from a single-channel PNG; any nonzero value counts as set.
    pub fn load_png(path: &Path) -> Result<Self, ImagingError> {
        let img = image::open(path)
            .map_err(|e| ImagingError::UnreadableFile {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = (img.width(), img.height());
        let bits = img.into_raw().into_iter().map(|v| v != 0).collect();
        Self::from_bits(w, h, bits)
    }
}

/// Condition of the dish itself — the classification target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DishCondition {
    Snow,
    Wet,
    Normal,
}

impl DishCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            DishCondition::Snow => "snow",
            DishCondition::Wet => "wet",
            DishCondition::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snow" => Some(DishCondition::Snow),
            "wet" => Some(DishCondition::Wet),
            "normal" => Some(DishCondition::Normal),
            _ => None,
        }
    }
}

impl fmt::Display for DishCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weather condition of the background scene a sample is composited onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundCondition {
    Snow,
    Sunny,
    Cloudy,
    Rain,
}

impl BackgroundCondition {
    pub const ALL: [BackgroundCondition; 4] = [
        BackgroundCondition::Snow,
        BackgroundCondition::Sunny,
        BackgroundCondition::Cloudy,
        BackgroundCondition::Rain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackgroundCondition::Snow => "snow",
            BackgroundCondition::Sunny => "sunny",
            BackgroundCondition::Cloudy => "cloudy",
            BackgroundCondition::Rain => "rain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snow" => Some(BackgroundCondition::Snow),
            "sunny" => Some(BackgroundCondition::Sunny),
            "cloudy" => Some(BackgroundCondition::Cloudy),
            "rain" => Some(BackgroundCondition::Rain),
            _ => None,
        }
    }
}

impl fmt::Display for BackgroundCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

/// One labeled dataset entry. Paths are relative to the manifest location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub relative_path: PathBuf,
    pub dish_condition: DishCondition,
    pub background_condition: BackgroundCondition,
    pub split: Split,
    pub source_cutout_id: String,
    pub combination_index: u32,
    pub rng_stream_id: String,
}

/// Decode a PNG or JPEG file. RGBA is preserved for PNG with alpha; every
/// other layout is converted to RGB.
pub fn load_image(path: &Path) -> Result<Image, ImagingError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return Err(ImagingError::UnsupportedFormat {
            path: path.to_path_buf(),
        });
    }
    let decoded = image::open(path).map_err(|e| ImagingError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let img = match decoded {
        image::DynamicImage::ImageRgba8(rgba) => {
            Image::from_raw(rgba.width(), rgba.height(), Channels::Rgba, rgba.into_raw())?
        }
        other => {
            let rgb = other.to_rgb8();
            Image::from_raw(rgb.width(), rgb.height(), Channels::Rgb, rgb.into_raw())?
        }
    };
    Ok(img)
}

/// Encode as PNG (lossless) or JPEG depending on the file extension.
pub fn save_image(img: &Image, path: &Path) -> Result<(), ImagingError> {
    let result = match img.channels() {
        Channels::Rgb => image::RgbImage::from_raw(img.width(), img.height(), img.data().to_vec())
            .unwrap()
            .save(path),
        Channels::Rgba => {
            image::RgbaImage::from_raw(img.width(), img.height(), img.data().to_vec())
                .unwrap()
                .save(path)
        }
    };
    result.map_err(|e| ImagingError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Bilinear sample at fractional coordinates, clamped at the borders. RGBA
/// channels are weighted by alpha so transparent neighbors do not bleed color.
fn sample_bilinear(img: &Image, fx: f64, fy: f64) -> [u8; 4] {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let x0 = fx.floor() as i64;
    let y0 = fy.floor() as i64;
    let dx = fx - x0 as f64;
    let dy = fy - y0 as f64;

    let clamp = |x: i64, max: i64| x.clamp(0, max - 1) as u32;
    let p00 = img.pixel(clamp(x0, w), clamp(y0, h));
    let p10 = img.pixel(clamp(x0 + 1, w), clamp(y0, h));
    let p01 = img.pixel(clamp(x0, w), clamp(y0 + 1, h));
    let p11 = img.pixel(clamp(x0 + 1, w), clamp(y0 + 1, h));

    let w00 = (1.0 - dx) * (1.0 - dy);
    let w10 = dx * (1.0 - dy);
    let w01 = (1.0 - dx) * dy;
    let w11 = dx * dy;

    let premul = img.channels() == Channels::Rgba;
    let mut out = [0u8; 4];
    let alpha =
        w00 * p00[3] as f64 + w10 * p10[3] as f64 + w01 * p01[3] as f64 + w11 * p11[3] as f64;
    for c in 0..3 {
        let v = if premul {
            let num = w00 * p00[c] as f64 * p00[3] as f64
                + w10 * p10[c] as f64 * p10[3] as f64
                + w01 * p01[c] as f64 * p01[3] as f64
                + w11 * p11[c] as f64 * p11[3] as f64;
            if alpha > 0.0 {
                num / alpha
            } else {
                0.0
            }
        } else {
            w00 * p00[c] as f64 + w10 * p10[c] as f64 + w01 * p01[c] as f64 + w11 * p11[c] as f64
        };
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    out[3] = alpha.round().clamp(0.0, 255.0) as u8;
    out
}

/// Bilinear resize to exactly (w, h). Resizing to the input dimensions
/// returns a pixel-identical copy.
pub fn resize(img: &Image, w: u32, h: u32) -> Result<Image, ImagingError> {
    if w == 0 || h == 0 {
        return Err(ImagingError::InvalidDimensions {
            width: w,
            height: h,
        });
    }
    let mut out = Image::new(w, h, img.channels())?;
    let sx = img.width() as f64 / w as f64;
    let sy = img.height() as f64 / h as f64;
    for y in 0..h {
        for x in 0..w {
            // pixel-center mapping: identity when sx == sy == 1
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let fy = (y as f64 + 0.5) * sy - 0.5;
            out.set_pixel(x, y, sample_bilinear(img, fx, fy));
        }
    }
    Ok(out)
}

/// Sine/cosine of the angle with exact values at multiples of 90 degrees, so
/// quarter turns are lossless pixel remaps.
fn rotation_terms(angle_deg: f64) -> (f64, f64) {
    let normalized = angle_deg.rem_euclid(360.0);
    if normalized % 90.0 == 0.0 {
        match (normalized / 90.0) as i64 % 4 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        let theta = angle_deg.to_radians();
        (theta.sin(), theta.cos())
    }
}

/// Rotate by `angle_deg` (counter-clockwise in image coordinates) and scale
/// uniformly. The canvas grows to contain the rotated extent; pixels outside
/// the source stay fully transparent. Input must be RGBA.
pub fn rotate_and_scale(img: &Image, angle_deg: f64, scale: f64) -> Result<Image, ImagingError> {
    if img.channels() != Channels::Rgba {
        return Err(ImagingError::ChannelMismatch {
            expected: 4,
            got: img.channels().count() as u8,
        });
    }
    if scale <= 0.0 {
        return Err(ImagingError::NonPositiveScale(scale));
    }
    let (sin_t, cos_t) = rotation_terms(angle_deg);
    let src_w = img.width() as f64;
    let src_h = img.height() as f64;
    let out_wf = (src_w * scale * cos_t).abs() + (src_h * scale * sin_t).abs();
    let out_hf = (src_w * scale * sin_t).abs() + (src_h * scale * cos_t).abs();
    // tolerate float noise just below an integer boundary
    let out_w = ((out_wf - 1e-9).ceil() as u32).max(1);
    let out_h = ((out_hf - 1e-9).ceil() as u32).max(1);

    let mut out = Image::new(out_w, out_h, Channels::Rgba)?;
    let cx_out = out_w as f64 / 2.0;
    let cy_out = out_h as f64 / 2.0;
    let cx_src = src_w / 2.0;
    let cy_src = src_h / 2.0;
    for y in 0..out_h {
        for x in 0..out_w {
            let u = x as f64 + 0.5 - cx_out;
            let v = y as f64 + 0.5 - cy_out;
            // inverse rotation then inverse scale
            let sx = (cos_t * u + sin_t * v) / scale + cx_src - 0.5;
            let sy = (-sin_t * u + cos_t * v) / scale + cy_src - 0.5;
            if sx < -0.5 || sy < -0.5 || sx > src_w - 0.5 || sy > src_h - 0.5 {
                continue; // stays transparent
            }
            out.set_pixel(x, y, sample_bilinear(img, sx, sy));
        }
    }
    Ok(out)
}
