use image::{imageops, Rgb, RgbImage};

use super::BoundingBox;
use crate::raster::{draw_text, fill_rect, outline_rect, text_width, GLYPH};

/// Stroke width of the candidate outline.
pub const OUTLINE_PX: u32 = 4;

const OUTLINE: Rgb<u8> = Rgb([255, 0, 0]);
const LABEL_BG: Rgb<u8> = Rgb([255, 255, 255]);
const LABEL_SCALE: u32 = 2;

/// Copy of the pixels under `bbox`.
pub fn crop(screen: &RgbImage, bbox: BoundingBox) -> RgbImage {
    imageops::crop_imm(screen, bbox.x_min, bbox.y_min, bbox.width(), bbox.height()).to_image()
}

/// The padded crop with `original` outlined and `index` written at the
/// top-left of the outlined box. `screen` is not modified.
pub fn annotate_crop(screen: &RgbImage, padded: BoundingBox, original: BoundingBox, index: usize) -> RgbImage {
    let mut out = crop(screen, padded);
    let x0 = original.x_min as i64 - padded.x_min as i64;
    let y0 = original.y_min as i64 - padded.y_min as i64;
    let x1 = x0 + original.width() as i64;
    let y1 = y0 + original.height() as i64;
    outline_rect(&mut out, x0, y0, x1, y1, OUTLINE_PX as i64, OUTLINE);

    let label = index.to_string();
    let lx = x0 + OUTLINE_PX as i64;
    let ly = y0 + OUTLINE_PX as i64;
    let lw = text_width(&label, LABEL_SCALE) as i64;
    let lh = (GLYPH * LABEL_SCALE) as i64;
    fill_rect(&mut out, lx, ly, lx + lw + 2, ly + lh + 2, LABEL_BG);
    draw_text(&mut out, lx + 1, ly + 1, &label, LABEL_SCALE, OUTLINE);
    out
}
