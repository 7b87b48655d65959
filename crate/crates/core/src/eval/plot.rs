//! Minimal deterministic PNG line plots: axes, ticks, legend, and a tiny
//! built-in 3x5 glyph font. No font or plotting dependencies, byte-stable
//! output.

use std::path::Path;

use super::{EvalError, LossCurve};
use crate::imaging::{save_image, Channels, Image};

const WIDTH: u32 = 900;
const HEIGHT: u32 = 600;
const MARGIN_LEFT: u32 = 80;
const MARGIN_RIGHT: u32 = 30;
const MARGIN_TOP: u32 = 40;
const MARGIN_BOTTOM: u32 = 50;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// 3x5 glyphs, row-major bits, bit 0 = top-left.
fn glyph(c: char) -> u16 {
    fn rows(r: [u8; 5]) -> u16 {
        let mut bits = 0u16;
        for (i, row) in r.iter().enumerate() {
            bits |= (*row as u16 & 0b111) << (i * 3);
        }
        bits
    }
    match c.to_ascii_lowercase() {
        '0' => rows([0b111, 0b101, 0b101, 0b101, 0b111]),
        '1' => rows([0b010, 0b110, 0b010, 0b010, 0b111]),
        '2' => rows([0b111, 0b001, 0b111, 0b100, 0b111]),
        '3' => rows([0b111, 0b001, 0b111, 0b001, 0b111]),
        '4' => rows([0b101, 0b101, 0b111, 0b001, 0b001]),
        '5' => rows([0b111, 0b100, 0b111, 0b001, 0b111]),
        '6' => rows([0b111, 0b100, 0b111, 0b101, 0b111]),
        '7' => rows([0b111, 0b001, 0b001, 0b010, 0b010]),
        '8' => rows([0b111, 0b101, 0b111, 0b101, 0b111]),
        '9' => rows([0b111, 0b101, 0b111, 0b001, 0b111]),
        'a' => rows([0b010, 0b101, 0b111, 0b101, 0b101]),
        'b' => rows([0b110, 0b101, 0b110, 0b101, 0b110]),
        'c' => rows([0b011, 0b100, 0b100, 0b100, 0b011]),
        'd' => rows([0b110, 0b101, 0b101, 0b101, 0b110]),
        'e' => rows([0b111, 0b100, 0b110, 0b100, 0b111]),
        'f' => rows([0b111, 0b100, 0b110, 0b100, 0b100]),
        'g' => rows([0b011, 0b100, 0b101, 0b101, 0b011]),
        'h' => rows([0b101, 0b101, 0b111, 0b101, 0b101]),
        'i' => rows([0b111, 0b010, 0b010, 0b010, 0b111]),
        'j' => rows([0b001, 0b001, 0b001, 0b101, 0b010]),
        'k' => rows([0b101, 0b110, 0b100, 0b110, 0b101]),
        'l' => rows([0b100, 0b100, 0b100, 0b100, 0b111]),
        'm' => rows([0b101, 0b111, 0b111, 0b101, 0b101]),
        'n' => rows([0b110, 0b101, 0b101, 0b101, 0b101]),
        'o' => rows([0b010, 0b101, 0b101, 0b101, 0b010]),
        'p' => rows([0b110, 0b101, 0b110, 0b100, 0b100]),
        'q' => rows([0b010, 0b101, 0b101, 0b011, 0b001]),
        'r' => rows([0b110, 0b101, 0b110, 0b110, 0b101]),
        's' => rows([0b011, 0b100, 0b010, 0b001, 0b110]),
        't' => rows([0b111, 0b010, 0b010, 0b010, 0b010]),
        'u' => rows([0b101, 0b101, 0b101, 0b101, 0b111]),
        'v' => rows([0b101, 0b101, 0b101, 0b101, 0b010]),
        'w' => rows([0b101, 0b101, 0b111, 0b111, 0b101]),
        'x' => rows([0b101, 0b101, 0b010, 0b101, 0b101]),
        'y' => rows([0b101, 0b101, 0b010, 0b010, 0b010]),
        'z' => rows([0b111, 0b001, 0b010, 0b100, 0b111]),
        '.' => rows([0b000, 0b000, 0b000, 0b000, 0b010]),
        ',' => rows([0b000, 0b000, 0b000, 0b010, 0b100]),
        '-' => rows([0b000, 0b000, 0b111, 0b000, 0b000]),
        '_' => rows([0b000, 0b000, 0b000, 0b000, 0b111]),
        '=' => rows([0b000, 0b111, 0b000, 0b111, 0b000]),
        '(' => rows([0b010, 0b100, 0b100, 0b100, 0b010]),
        ')' => rows([0b010, 0b001, 0b001, 0b001, 0b010]),
        '%' => rows([0b101, 0b001, 0b010, 0b100, 0b101]),
        ':' => rows([0b000, 0b010, 0b000, 0b010, 0b000]),
        '/' => rows([0b001, 0b001, 0b010, 0b100, 0b100]),
        '+' => rows([0b000, 0b010, 0b111, 0b010, 0b000]),
        ' ' => 0,
        _ => rows([0b111, 0b101, 0b101, 0b101, 0b111]),
    }
}

fn put(img: &mut Image, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.set_pixel(x as u32, y as u32, [color[0], color[1], color[2], 255]);
    }
}

fn draw_text(img: &mut Image, text: &str, x: u32, y: u32, scale: u32, color: [u8; 3]) {
    let mut cx = x;
    for c in text.chars() {
        let bits = glyph(c);
        for row in 0..5u32 {
            for col in 0..3u32 {
                if bits >> (row * 3 + col) & 1 == 1 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            put(
                                img,
                                (cx + col * scale + sx) as i64,
                                (y + row * scale + sy) as i64,
                                color,
                            );
                        }
                    }
                }
            }
        }
        cx += 4 * scale;
    }
}

fn draw_line(img: &mut Image, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + t * (x1 - x0);
        let y = y0 + t * (y1 - y0);
        // 2px stroke
        for (dx, dy) in [(0.0, 0.0), (0.0, 1.0)] {
            put(img, (x + dx).round() as i64, (y + dy).round() as i64, color);
        }
    }
}

/// Render normalized loss curves to a PNG: one polyline per model with a
/// legend carrying each model's alpha annotation.
pub fn plot_loss_curves(curves: &[LossCurve], path: &Path) -> Result<(), EvalError> {
    if curves.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let normalized: Vec<LossCurve> = curves
        .iter()
        .map(|c| {
            c.validate()?;
            c.normalized_curve()
        })
        .collect::<Result<_, _>>()?;

    let max_epoch = normalized
        .iter()
        .flat_map(|c| c.epochs.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let max_loss = normalized
        .iter()
        .flat_map(|c| c.losses.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.05;

    let mut img = Image::new(WIDTH, HEIGHT, Channels::Rgb).map_err(|_| EvalError::EmptyInput)?;
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            img.set_pixel(x, y, [255, 255, 255, 255]);
        }
    }

    let plot_w = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) as f64;
    let plot_h = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) as f64;
    let to_px = |epoch: f64, loss: f64| -> (f64, f64) {
        (
            MARGIN_LEFT as f64 + epoch / max_epoch * plot_w,
            MARGIN_TOP as f64 + (1.0 - loss / max_loss) * plot_h,
        )
    };

    let black = [0, 0, 0];
    let gray = [200, 200, 200];
    // axes
    draw_line(
        &mut img,
        MARGIN_LEFT as f64,
        MARGIN_TOP as f64,
        MARGIN_LEFT as f64,
        (HEIGHT - MARGIN_BOTTOM) as f64,
        black,
    );
    draw_line(
        &mut img,
        MARGIN_LEFT as f64,
        (HEIGHT - MARGIN_BOTTOM) as f64,
        (WIDTH - MARGIN_RIGHT) as f64,
        (HEIGHT - MARGIN_BOTTOM) as f64,
        black,
    );
    // ticks and grid
    for i in 0..=5 {
        let loss = max_loss * i as f64 / 5.0;
        let (_, y) = to_px(0.0, loss);
        if i > 0 {
            draw_line(
                &mut img,
                MARGIN_LEFT as f64,
                y,
                (WIDTH - MARGIN_RIGHT) as f64,
                y,
                gray,
            );
        }
        draw_text(&mut img, &format!("{loss:>6.2}"), 10, y as u32, 2, black);
        let epoch = max_epoch * i as f64 / 5.0;
        let (x, _) = to_px(epoch, 0.0);
        draw_text(
            &mut img,
            &format!("{epoch:.0}"),
            x as u32,
            HEIGHT - MARGIN_BOTTOM + 8,
            2,
            black,
        );
    }
    draw_text(&mut img, "epoch", WIDTH / 2 - 20, HEIGHT - 22, 2, black);
    draw_text(
        &mut img,
        "normalized classification loss",
        MARGIN_LEFT,
        14,
        2,
        black,
    );

    for (k, curve) in normalized.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut prev: Option<(f64, f64)> = None;
        for (&e, &l) in curve.epochs.iter().zip(curve.losses.iter()) {
            let p = to_px(e as f64, l.min(max_loss));
            if let Some(q) = prev {
                draw_line(&mut img, q.0, q.1, p.0, p.1, color);
            }
            prev = Some(p);
        }
        // legend row with the alpha that was applied; curves that arrived
        // normalized were not rescaled
        let ly = MARGIN_TOP + 14 + 26 * k as u32;
        let lx = WIDTH - MARGIN_RIGHT - 330;
        draw_line(
            &mut img,
            lx as f64,
            ly as f64 + 4.0,
            lx as f64 + 26.0,
            ly as f64 + 4.0,
            color,
        );
        let alpha = if curves[k].normalized {
            1.0
        } else {
            curves[k].alpha().unwrap_or(1.0)
        };
        draw_text(
            &mut img,
            &format!("{} (a={alpha:.4})", curve.model_id),
            lx + 34,
            ly,
            2,
            black,
        );
    }

    save_image(&img, path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}
