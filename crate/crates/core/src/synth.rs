//! Procedural sample data: dish cutouts, weather-condition backgrounds and
//! cluttered built-environment scenes.
//!
//! Everything here is seeded and deterministic. The generators exist so the
//! pipeline can be exercised end to end without any photo collection: tests,
//! the acceptance suite and the `synth` CLI command all draw from this
//! module. Real deployments replace these with photographed cutouts and
//! weather imagery in the same directory layout.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::forge::{
    compose, BackgroundImage, BackgroundPool, CompositionParams, Cutout, CutoutPool, ForgeError,
    Scenario,
};
use crate::imaging::{save_image, BackgroundCondition, BinaryMask, Channels, DishCondition, Image};
use crate::segmenter::{AnnotatedObject, AnnotationRecord};

fn mix(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt))
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// A parabolic-dish sprite with condition-specific surface texture. RGBA,
/// transparent outside the dish and its mount.
pub fn dish_cutout(condition: DishCondition, seed: u64) -> Cutout {
    let mut rng = mix(seed, 11);
    let w: u32 = rng.random_range(200..=260);
    let h: u32 = rng.random_range(140..=190);
    let mut img = Image::new(w, h, Channels::Rgba).unwrap();

    // dish face: ellipse occupying most of the sprite
    let cx = w as f64 / 2.0;
    let cy = h as f64 * 0.42;
    let rx = w as f64 * 0.46;
    let ry = h as f64 * 0.38;

    // the face color varies dish to dish; the condition shows in texture
    let tone = rng.random_range(150.0..215.0);
    let warm = rng.random_range(-12.0..12.0);
    let base: [f64; 3] = [tone + warm, tone, tone - warm * 0.5];
    let wet_darken = if condition == DishCondition::Wet {
        rng.random_range(0.52..0.68)
    } else {
        1.0
    };

    // snow patches: seeded disks biased to the upper half of the face
    let mut patches = Vec::new();
    if condition == DishCondition::Snow {
        let count = rng.random_range(10..16);
        for _ in 0..count {
            let px = rng.random_range(0.12..0.88) * w as f64;
            let py = rng.random_range(0.05..0.62) * h as f64;
            let pr = rng.random_range(0.10..0.24) * w as f64;
            patches.push((px, py, pr));
        }
    }
    // wet streak phases
    let streak_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let streak_freq = rng.random_range(0.55..0.9);

    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            let r2 = dx * dx + dy * dy;
            if r2 <= 1.0 {
                // radial shading toward the rim
                let shade = 1.0 - 0.35 * r2;
                let noise = (x as f64 * 12.9898 + y as f64 * 78.233).sin() * 6.0;
                let mut rgb = [
                    (base[0] * shade + noise) * wet_darken,
                    (base[1] * shade + noise) * wet_darken,
                    (base[2] * shade + noise) * wet_darken,
                ];
                match condition {
                    DishCondition::Snow => {
                        let covered = patches.iter().any(|&(px, py, pr)| {
                            let ddx = x as f64 - px;
                            let ddy = y as f64 - py;
                            ddx * ddx + ddy * ddy <= pr * pr
                        });
                        if covered || dy < -0.55 {
                            let sparkle = (x as f64 * 3.7 + y as f64 * 9.1).sin() * 5.0;
                            rgb = [246.0 + sparkle, 248.0 + sparkle, 252.0];
                        }
                    }
                    DishCondition::Wet => {
                        // runoff streaks and specular glints
                        let streak =
                            ((x as f64 * streak_freq + streak_phase).sin() * 0.5 + 0.5).powi(3);
                        let run = (y as f64 / h as f64) * 24.0;
                        rgb[0] -= streak * 26.0 + run;
                        rgb[1] -= streak * 22.0 + run;
                        rgb[2] -= streak * 12.0 + run * 0.5;
                        if (x * 7 + y * 13) % 97 == 0 {
                            rgb = [rgb[0] + 90.0, rgb[1] + 90.0, rgb[2] + 95.0];
                        }
                    }
                    DishCondition::Normal => {}
                }
                img.set_pixel(
                    x,
                    y,
                    [clamp_u8(rgb[0]), clamp_u8(rgb[1]), clamp_u8(rgb[2]), 255],
                );
            }
        }
    }

    // feed arm from the face toward the lower front, plus LNB block
    let arm_x0 = cx;
    let arm_y0 = cy + ry * 0.15;
    let arm_x1 = cx + rx * 0.05;
    let arm_y1 = h as f64 * 0.92;
    let steps = h * 2;
    for s in 0..steps {
        let t = s as f64 / steps as f64;
        let ax = arm_x0 + t * (arm_x1 - arm_x0);
        let ay = arm_y0 + t * (arm_y1 - arm_y0);
        for ox in -2i64..=2 {
            let px = ax as i64 + ox;
            let py = ay as i64;
            if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                let tone = (90.0 * wet_darken) as u8;
                img.set_pixel(px as u32, py as u32, [tone, tone, tone, 255]);
            }
        }
    }

    Cutout {
        id: format!("{}/synth_{seed:04}", condition),
        condition,
        image: img,
    }
}

/// One synthetic weather scene: smooth sky/ground fields in the palette of
/// the condition, with mild texture.
pub fn weather_background(condition: BackgroundCondition, seed: u64) -> Image {
    let mut rng = mix(seed, 23);
    let (w, h) = (400u32, 400u32);
    let mut img = Image::new(w, h, Channels::Rgb).unwrap();

    let (sky_top, sky_bottom, ground): ([f64; 3], [f64; 3], [f64; 3]) = match condition {
        BackgroundCondition::Snow => (
            [198.0, 205.0, 216.0],
            [226.0, 230.0, 238.0],
            [243.0, 245.0, 250.0],
        ),
        BackgroundCondition::Sunny => (
            [88.0, 152.0, 228.0],
            [158.0, 200.0, 246.0],
            [148.0, 168.0, 120.0],
        ),
        BackgroundCondition::Cloudy => (
            [128.0, 132.0, 140.0],
            [176.0, 178.0, 184.0],
            [120.0, 118.0, 110.0],
        ),
        BackgroundCondition::Rain => (
            [66.0, 74.0, 92.0],
            [110.0, 118.0, 134.0],
            [70.0, 72.0, 78.0],
        ),
    };
    let horizon = rng.random_range(0.55..0.75);
    let jitter = rng.random_range(-8.0..8.0);

    for y in 0..h {
        let fy = y as f64 / h as f64;
        for x in 0..w {
            let tex = ((x as f64 * 0.11 + y as f64 * 0.07 + seed as f64).sin()
                + (x as f64 * 0.031).cos())
                * 3.0;
            let rgb = if fy < horizon {
                let t = fy / horizon;
                [
                    sky_top[0] + t * (sky_bottom[0] - sky_top[0]) + tex + jitter,
                    sky_top[1] + t * (sky_bottom[1] - sky_top[1]) + tex + jitter,
                    sky_top[2] + t * (sky_bottom[2] - sky_top[2]) + tex + jitter,
                ]
            } else {
                [ground[0] + tex, ground[1] + tex, ground[2] + tex]
            };
            img.set_pixel(
                x,
                y,
                [clamp_u8(rgb[0]), clamp_u8(rgb[1]), clamp_u8(rgb[2]), 255],
            );
        }
    }

    // condition accents
    match condition {
        BackgroundCondition::Sunny => {
            let sx = rng.random_range(60.0..340.0);
            let sy = rng.random_range(40.0..130.0);
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 - sx).powi(2) + (y as f64 - sy).powi(2)).sqrt();
                    if d < 34.0 {
                        img.set_pixel(x, y, [252, 238, 160, 255]);
                    }
                }
            }
        }
        BackgroundCondition::Cloudy | BackgroundCondition::Snow => {
            for _ in 0..rng.random_range(3..6) {
                let cxf = rng.random_range(0.0..w as f64);
                let cyf = rng.random_range(0.0..(h as f64 * horizon * 0.8));
                let crx = rng.random_range(40.0..90.0);
                let cry = rng.random_range(14.0..30.0);
                for y in 0..h {
                    for x in 0..w {
                        let dx = (x as f64 - cxf) / crx;
                        let dy = (y as f64 - cyf) / cry;
                        if dx * dx + dy * dy < 1.0 {
                            let p = img.pixel(x, y);
                            img.set_pixel(
                                x,
                                y,
                                [
                                    clamp_u8(p[0] as f64 + 18.0),
                                    clamp_u8(p[1] as f64 + 18.0),
                                    clamp_u8(p[2] as f64 + 18.0),
                                    255,
                                ],
                            );
                        }
                    }
                }
            }
        }
        BackgroundCondition::Rain => {
            for _ in 0..400 {
                let x0 = rng.random_range(0..w as i64);
                let y0 = rng.random_range(0..h as i64);
                for s in 0..10i64 {
                    let px = x0 + s / 3;
                    let py = y0 + s;
                    if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                        let p = img.pixel(px as u32, py as u32);
                        img.set_pixel(
                            px as u32,
                            py as u32,
                            [
                                clamp_u8(p[0] as f64 + 26.0),
                                clamp_u8(p[1] as f64 + 26.0),
                                clamp_u8(p[2] as f64 + 30.0),
                                255,
                            ],
                        );
                    }
                }
            }
        }
    }
    img
}

/// A cluttered built-environment scene: saturated painted walls, signage
/// blocks, window grids and dense high-frequency texture. Stands in for the
/// varied, visually busy surroundings of real dish photographs.
pub fn clutter_background(seed: u64) -> Image {
    let mut rng = mix(seed, 37);
    let (w, h) = (400u32, 400u32);
    let mut img = Image::new(w, h, Channels::Rgb).unwrap();
    // saturated base wash
    let hue_shift: f64 = rng.random_range(0.0..3.0);
    for y in 0..h {
        for x in 0..w {
            let phase = hue_shift + x as f64 * 0.01;
            let r = 120.0 + 100.0 * (phase).sin();
            let g = 120.0 + 100.0 * (phase + 2.1).sin();
            let b = 120.0 + 100.0 * (phase + 4.2).sin();
            img.set_pixel(x, y, [clamp_u8(r), clamp_u8(g), clamp_u8(b), 255]);
        }
    }
    // vividly painted blocks with window grids
    for _ in 0..rng.random_range(12..18) {
        let bw = rng.random_range(50..150);
        let bh = rng.random_range(80..260);
        let bx = rng.random_range(0..w.saturating_sub(bw));
        let by = rng.random_range(0..h.saturating_sub(bh));
        let channel = rng.random_range(0..3usize);
        let hi: f64 = rng.random_range(150.0..250.0);
        let lo: f64 = rng.random_range(10.0..80.0);
        let mut tint = [lo, lo, lo];
        tint[channel] = hi;
        if rng.random_range(0..3) == 0 {
            tint[(channel + 1) % 3] = hi * 0.8;
        }
        for y in by..(by + bh).min(h) {
            for x in bx..(bx + bw).min(w) {
                img.set_pixel(
                    x,
                    y,
                    [clamp_u8(tint[0]), clamp_u8(tint[1]), clamp_u8(tint[2]), 255],
                );
            }
        }
        // window grid: strong high-frequency edges
        let cell = rng.random_range(8..14);
        for y in (by + 4..(by + bh).min(h).saturating_sub(4)).step_by(cell) {
            for x in ((bx + 4)..(bx + bw).min(w).saturating_sub(4)).step_by(cell) {
                let lit = rng.random_range(0..4) == 0;
                let v: [u8; 3] = if lit { [250, 230, 140] } else { [12, 14, 20] };
                for yy in y..(y + cell as u32 / 2).min(h) {
                    for xx in x..(x + cell as u32 / 2).min(w) {
                        img.set_pixel(xx, yy, [v[0], v[1], v[2], 255]);
                    }
                }
            }
        }
    }
    // speckle noise over everything
    for _ in 0..6000 {
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let p = img.pixel(x, y);
        let delta: f64 = rng.random_range(-60.0..60.0);
        img.set_pixel(
            x,
            y,
            [
                clamp_u8(p[0] as f64 + delta),
                clamp_u8(p[1] as f64 - delta),
                clamp_u8(p[2] as f64 + delta * 0.5),
                255,
            ],
        );
    }
    img
}

/// Build a balanced cutout pool of `per_condition` synthetic dishes for each
/// condition in the scenario.
pub fn make_cutout_pool(scenario: Scenario, per_condition: usize, seed: u64) -> CutoutPool {
    let mut cutouts = Vec::new();
    for (ci, &condition) in scenario.dish_conditions().iter().enumerate() {
        for k in 0..per_condition {
            cutouts.push(dish_cutout(condition, seed + (ci * 1000 + k) as u64));
        }
    }
    CutoutPool::new(cutouts)
}

/// Build a background pool of `per_condition` scenes for all four weather
/// conditions.
pub fn make_background_pool(per_condition: usize, seed: u64) -> BackgroundPool {
    let mut backgrounds = Vec::new();
    for (bi, condition) in BackgroundCondition::ALL.into_iter().enumerate() {
        for k in 0..per_condition {
            backgrounds.push(BackgroundImage {
                id: format!("{condition}/synth_{k:03}"),
                condition,
                image: weather_background(condition, seed + (bi * 1000 + k) as u64),
            });
        }
    }
    BackgroundPool::new(backgrounds)
}

/// What `write_sample_tree` produced.
#[derive(Debug)]
pub struct SampleTree {
    pub cutouts_dir: PathBuf,
    pub backgrounds_dir: PathBuf,
    pub photos_dir: PathBuf,
    pub annotations_dir: PathBuf,
}

/// Materialize a complete demo workspace: cutout and background pools in the
/// loadable directory layout, plus annotated "dish photographs" (dishes
/// composited onto clutter) for exercising segmentation fine-tuning.
pub fn write_sample_tree(
    dir: &Path,
    scenario: Scenario,
    cutouts_per_condition: usize,
    backgrounds_per_condition: usize,
    photos: usize,
    seed: u64,
) -> Result<SampleTree, ForgeError> {
    let cutouts_dir = dir.join("cutouts");
    let backgrounds_dir = dir.join("backgrounds");
    let photos_dir = dir.join("photos");
    let annotations_dir = dir.join("annotations");

    let cutout_pool = make_cutout_pool(scenario, cutouts_per_condition, seed);
    for cutout in cutout_pool.cutouts() {
        let sub = cutouts_dir.join(cutout.condition.as_str());
        std::fs::create_dir_all(&sub).map_err(|e| ForgeError::Io {
            path: sub.clone(),
            source: e,
        })?;
        let name = cutout.id.split('/').next_back().unwrap();
        save_image(&cutout.image, &sub.join(format!("{name}.png")))?;
    }

    let background_pool = make_background_pool(backgrounds_per_condition, seed + 71);
    for bg in [&background_pool].iter().flat_map(|p| {
        BackgroundCondition::ALL
            .into_iter()
            .flat_map(|c| p.of_condition(c))
    }) {
        let sub = backgrounds_dir.join(bg.condition.as_str());
        std::fs::create_dir_all(&sub).map_err(|e| ForgeError::Io {
            path: sub.clone(),
            source: e,
        })?;
        let name = bg.id.split('/').next_back().unwrap();
        save_image(&bg.image, &sub.join(format!("{name}.png")))?;
    }

    // annotated photos: dishes on clutter, ground truth from the compositor
    std::fs::create_dir_all(&photos_dir).map_err(|e| ForgeError::Io {
        path: photos_dir.clone(),
        source: e,
    })?;
    let masks_dir = annotations_dir.join("masks");
    std::fs::create_dir_all(&masks_dir).map_err(|e| ForgeError::Io {
        path: masks_dir.clone(),
        source: e,
    })?;
    let params = CompositionParams::default();
    let conditions = scenario.dish_conditions();
    for k in 0..photos {
        let condition = conditions[k % conditions.len()];
        let candidates = cutout_pool.of_condition(condition);
        let mut rng = mix(seed + 131, k as u64);
        let cutout = candidates[rng.random_range(0..candidates.len())];
        let clutter = clutter_background(seed + 500 + k as u64);
        let (photo, mask) = compose_onto(&cutout.image, &clutter, &params, &mut rng)?;
        let stem = format!("photo_{k:03}");
        save_image(&photo, &photos_dir.join(format!("{stem}.png")))?;
        mask.save_png(&masks_dir.join(format!("{stem}.png")))?;
        let record = AnnotationRecord {
            image: PathBuf::from("../photos").join(format!("{stem}.png")),
            width: photo.width(),
            height: photo.height(),
            objects: vec![AnnotatedObject {
                class_name: "dish".to_string(),
                polygon: None,
                mask: Some(PathBuf::from("masks").join(format!("{stem}.png"))),
            }],
        };
        let ann_path = annotations_dir.join(format!("{stem}.json"));
        std::fs::write(&ann_path, serde_json::to_vec_pretty(&record).unwrap()).map_err(|e| {
            ForgeError::Io {
                path: ann_path.clone(),
                source: e,
            }
        })?;
    }

    Ok(SampleTree {
        cutouts_dir,
        backgrounds_dir,
        photos_dir,
        annotations_dir,
    })
}

fn compose_onto(
    cutout: &Image,
    background: &Image,
    params: &CompositionParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, BinaryMask), ForgeError> {
    // rejection-sample until the rotated sprite fits the frame
    for _ in 0..100 {
        match compose(cutout, background, params, rng) {
            Ok(done) => return Ok(done),
            Err(ForgeError::CutoutTooLarge { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    compose(cutout, background, params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn cutouts_are_rgba_and_seeded() {
        let a = dish_cutout(DishCondition::Snow, 4);
        let b = dish_cutout(DishCondition::Snow, 4);
        let c = dish_cutout(DishCondition::Snow, 5);
        assert_eq!(a.image, b.image);
        assert_ne!(a.image, c.image);
        assert_eq!(a.image.channels(), Channels::Rgba);
        // transparent corners, opaque center
        assert_eq!(a.image.pixel(0, 0)[3], 0);
        let (cx, cy) = (a.image.width() / 2, a.image.height() / 3);
        assert_eq!(a.image.pixel(cx, cy)[3], 255);
    }

    #[test]
    fn condition_textures_differ_in_brightness() {
        let mean_face = |condition: DishCondition| -> f64 {
            let c = dish_cutout(condition, 9);
            let mut sum = 0.0;
            let mut n = 0.0;
            for y in 0..c.image.height() {
                for x in 0..c.image.width() {
                    let p = c.image.pixel(x, y);
                    if p[3] == 255 {
                        sum += (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0;
                        n += 1.0;
                    }
                }
            }
            sum / n
        };
        let snow = mean_face(DishCondition::Snow);
        let wet = mean_face(DishCondition::Wet);
        let normal = mean_face(DishCondition::Normal);
        assert!(snow > normal, "snow {snow} vs normal {normal}");
        assert!(wet < normal, "wet {wet} vs normal {normal}");
    }

    #[test]
    fn pools_are_balanced() {
        let pool = make_cutout_pool(Scenario::Extended, 4, 1);
        assert_eq!(pool.len(), 12);
        for c in Scenario::Extended.dish_conditions() {
            assert_eq!(pool.of_condition(*c).len(), 4);
        }
        let bgs = make_background_pool(3, 2);
        assert_eq!(bgs.len(), 12);
    }

    #[test]
    fn sample_tree_is_loadable() {
        let dir = tempdir().unwrap();
        let tree = write_sample_tree(dir.path(), Scenario::Initial, 2, 1, 4, 3).unwrap();
        let cutouts = CutoutPool::load_dir(&tree.cutouts_dir).unwrap();
        assert_eq!(cutouts.len(), 4);
        let bgs = BackgroundPool::load_dir(&tree.backgrounds_dir).unwrap();
        assert_eq!(bgs.len(), 4);
        let anns = crate::segmenter::AnnotationSet::load_dir(&tree.annotations_dir).unwrap();
        assert_eq!(anns.images().len(), 4);
        for ann in anns.images() {
            assert!(ann.image_path.is_file());
            assert_eq!(ann.masks.len(), 1);
            assert!(!ann.masks[0].is_empty());
        }
    }
}
