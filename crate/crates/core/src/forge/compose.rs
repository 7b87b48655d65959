//! Alpha compositing of one cutout onto one background.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{CompositionParams, ForgeError};
use crate::imaging::{resize, rotate_and_scale, BinaryMask, Channels, Image};

/// Every forged sample is exactly this many pixels square, RGB.
pub const FORGED_IMAGE_SIZE: u32 = 300;

/// Center-crop to a square and resize to the forged sample size.
pub fn resize_background(background: &Image) -> Result<Image, ForgeError> {
    let side = background.width().min(background.height());
    let x0 = (background.width() - side) / 2;
    let y0 = (background.height() - side) / 2;
    let mut square = Image::new(side, side, Channels::Rgb)?;
    for y in 0..side {
        for x in 0..side {
            let p = background.pixel(x0 + x, y0 + y);
            square.set_pixel(x, y, p);
        }
    }
    Ok(resize(&square, FORGED_IMAGE_SIZE, FORGED_IMAGE_SIZE)?)
}

fn sample_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Integer source-over blend of one channel.
fn blend(src: u8, dst: u8, alpha: u8) -> u8 {
    let a = alpha as u32;
    ((a * src as u32 + (255 - a) * dst as u32 + 127) / 255) as u8
}

/// Composite a cutout onto a background. Draws, in order: scale (fraction of
/// frame width), rotation (degrees), then a position keeping the cutout
/// fully inside the frame. Returns the 300x300 RGB composite and the exact
/// placement mask (majority-opaque pixels).
pub fn compose(
    cutout: &Image,
    background: &Image,
    params: &CompositionParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, BinaryMask), ForgeError> {
    params.validate()?;
    let mut canvas = resize_background(background)?;

    let scale = sample_range(rng, params.scale_range.0, params.scale_range.1);
    let rotation = sample_range(
        rng,
        params.rotation_range_deg.0,
        params.rotation_range_deg.1,
    );

    let target_w = (scale * FORGED_IMAGE_SIZE as f64).round().max(1.0) as u32;
    let scale_factor = target_w as f64 / cutout.width() as f64;
    let placed = rotate_and_scale(cutout, rotation, scale_factor)?;
    if placed.width() > FORGED_IMAGE_SIZE || placed.height() > FORGED_IMAGE_SIZE {
        return Err(ForgeError::CutoutTooLarge {
            w: placed.width(),
            h: placed.height(),
            size: FORGED_IMAGE_SIZE,
        });
    }

    let max_x = FORGED_IMAGE_SIZE - placed.width();
    let max_y = FORGED_IMAGE_SIZE - placed.height();
    let pos_x = if max_x == 0 {
        0
    } else {
        rng.random_range(0..=max_x)
    };
    let pos_y = if max_y == 0 {
        0
    } else {
        rng.random_range(0..=max_y)
    };

    let mut mask = BinaryMask::new(FORGED_IMAGE_SIZE, FORGED_IMAGE_SIZE)?;
    for y in 0..placed.height() {
        for x in 0..placed.width() {
            let src = placed.pixel(x, y);
            if src[3] == 0 {
                continue;
            }
            let (cx, cy) = (pos_x + x, pos_y + y);
            let dst = canvas.pixel(cx, cy);
            canvas.set_pixel(
                cx,
                cy,
                [
                    blend(src[0], dst[0], src[3]),
                    blend(src[1], dst[1], src[3]),
                    blend(src[2], dst[2], src[3]),
                    255,
                ],
            );
            if src[3] >= 128 {
                mask.set(cx, cy, true);
            }
        }
    }
    Ok((canvas, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn solid_background(value: [u8; 3]) -> Image {
        let mut img = Image::new(600, 600, Channels::Rgb).unwrap();
        for y in 0..600 {
            for x in 0..600 {
                img.set_pixel(x, y, [value[0], value[1], value[2], 255]);
            }
        }
        img
    }

    fn opaque_cutout(w: u32, h: u32, value: [u8; 3]) -> Image {
        let mut img = Image::new(w, h, Channels::Rgba).unwrap();
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [value[0], value[1], value[2], 255]);
            }
        }
        img
    }

    #[test]
    fn transparent_cutout_leaves_background() {
        let bg = solid_background([10, 120, 200]);
        let cutout = Image::new(50, 50, Channels::Rgba).unwrap(); // all alpha 0
        let params = CompositionParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, mask) = compose(&cutout, &bg, &params, &mut rng).unwrap();
        let expected = resize_background(&bg).unwrap();
        assert_eq!(out, expected);
        assert!(mask.is_empty());
    }

    #[test]
    fn opaque_cutout_replaces_exact_rectangle() {
        let bg = solid_background([0, 0, 0]);
        // 150 px wide at scale 0.5 of the 300 px frame: no resampling
        let cutout = opaque_cutout(150, 60, [250, 10, 10]);
        let params = CompositionParams {
            scale_range: (0.5, 0.5),
            rotation_range_deg: (0.0, 0.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (out, mask) = compose(&cutout, &bg, &params, &mut rng).unwrap();
        // brute-force oracle: locate the placement from the mask, then check
        // every pixel of the frame
        let (x0, y0, x1, y1) = mask.bounding_box().unwrap();
        assert_eq!((x1 - x0 + 1, y1 - y0 + 1), (150, 60));
        for y in 0..FORGED_IMAGE_SIZE {
            for x in 0..FORGED_IMAGE_SIZE {
                let inside = (x0..=x1).contains(&x) && (y0..=y1).contains(&y);
                let expected = if inside {
                    [250, 10, 10, 255]
                } else {
                    [0, 0, 0, 255]
                };
                assert_eq!(out.pixel(x, y), expected, "pixel ({x},{y})");
            }
        }
        assert_eq!(mask.popcount(), 150 * 60);
    }

    #[test]
    fn oversized_scale_is_rejected() {
        let bg = solid_background([5, 5, 5]);
        let cutout = opaque_cutout(100, 100, [1, 2, 3]);
        let params = CompositionParams {
            scale_range: (1.2, 1.2),
            rotation_range_deg: (0.0, 0.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            compose(&cutout, &bg, &params, &mut rng),
            Err(ForgeError::CutoutTooLarge { .. })
        ));
    }

    #[test]
    fn compose_is_deterministic_in_rng_state() {
        let bg = solid_background([90, 90, 90]);
        let cutout = opaque_cutout(80, 40, [200, 200, 0]);
        let params = CompositionParams::default();
        let (a, _) = compose(&cutout, &bg, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (b, _) = compose(&cutout, &bg, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_is_always_300x300_rgb() {
        let bg = solid_background([90, 20, 90]);
        let cutout = opaque_cutout(64, 64, [1, 200, 3]);
        let params = CompositionParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (out, _) = compose(&cutout, &bg, &params, &mut rng).unwrap();
        assert_eq!(
            (out.width(), out.height(), out.channels()),
            (300, 300, Channels::Rgb)
        );
    }
}
