//! Minimal deterministic raster drawing on `RgbImage`: filled and outlined
//! rectangles, a few filled shapes, and text in an embedded 8x8 bitmap font.
//! Everything clips to the image bounds.

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};

pub const GLYPH: u32 = 8;

pub fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Outline of `[x0, x1) x [y0, y1)` drawn inward with the given stroke.
pub fn outline_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, stroke: i64, color: Rgb<u8>) {
    fill_rect(img, x0, y0, x1, (y0 + stroke).min(y1), color);
    fill_rect(img, x0, (y1 - stroke).max(y0), x1, y1, color);
    fill_rect(img, x0, y0, (x0 + stroke).min(x1), y1, color);
    fill_rect(img, (x1 - stroke).max(x0), y0, x1, y1, color);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Diamond,
    TriangleUp,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Square, Shape::Circle, Shape::Diamond, Shape::TriangleUp];
}

/// Fill `shape` inscribed in the rectangle.
pub fn fill_shape(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, shape: Shape, color: Rgb<u8>) {
    let (w, h) = ((x1 - x0).max(1) as f64, (y1 - y0).max(1) as f64);
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..y1.min(ih) {
        for x in x0.max(0)..x1.min(iw) {
            // unit coordinates of the pixel center in [-1, 1]
            let u = ((x - x0) as f64 + 0.5) / w * 2.0 - 1.0;
            let v = ((y - y0) as f64 + 0.5) / h * 2.0 - 1.0;
            let inside = match shape {
                Shape::Square => true,
                Shape::Circle => u * u + v * v <= 1.0,
                Shape::Diamond => u.abs() + v.abs() <= 1.0,
                Shape::TriangleUp => v >= 2.0 * u.abs() - 1.0,
            };
            if inside {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Draw `text` with its top-left corner at `(x, y)`; each font pixel becomes
/// a `scale x scale` block. Non-ASCII characters render as `?`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: u32, color: Rgb<u8>) {
    let scale = scale.max(1) as i64;
    let mut pen = x;
    for ch in text.chars() {
        let code = if ch.is_ascii() { ch as usize } else { '?' as usize };
        let glyph = BASIC_LEGACY[code];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) != 0 {
                    let px = pen + col as i64 * scale;
                    let py = y + row as i64 * scale;
                    fill_rect(img, px, py, px + scale, py + scale, color);
                }
            }
        }
        pen += GLYPH as i64 * scale;
    }
}

pub fn text_width(text: &str, scale: u32) -> u32 {
    text.chars().count() as u32 * GLYPH * scale.max(1)
}
