use std::collections::BTreeSet;

use image::{Rgb, RgbImage};
use sha2::{Digest, Sha256};

use super::{ElementKind, SceneGraph, SimState};
use crate::raster::{draw_text, fill_rect, fill_shape, outline_rect, text_width, Shape, GLYPH};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const INPUT_BORDER: Rgb<u8> = Rgb([150, 150, 150]);
const FOCUS_BORDER: Rgb<u8> = Rgb([30, 110, 230]);

fn named_color(word: &str) -> Option<Rgb<u8>> {
    Some(Rgb(match word {
        "red" => [220, 40, 40],
        "blue" => [40, 90, 220],
        "green" => [40, 170, 70],
        "yellow" => [240, 200, 30],
        "orange" => [245, 140, 20],
        "purple" => [140, 60, 200],
        "pink" => [240, 110, 170],
        "gray" | "grey" => [128, 128, 128],
        "black" => [20, 20, 20],
        "white" => [250, 250, 250],
        _ => return None,
    }))
}

fn named_shape(word: &str) -> Option<Shape> {
    match word {
        "round" | "circle" | "circular" => Some(Shape::Circle),
        "square" => Some(Shape::Square),
        "diamond" => Some(Shape::Diamond),
        "triangle" | "triangular" => Some(Shape::TriangleUp),
        _ => None,
    }
}

/// Icon appearance: named colors and shapes in the tags win, otherwise both
/// derive from a hash of the sorted tag set.
fn icon_style(tags: &BTreeSet<String>) -> (Rgb<u8>, Shape) {
    let digest = Sha256::digest(tags.iter().cloned().collect::<Vec<_>>().join("\u{1f}").as_bytes());
    let color = tags
        .iter()
        .find_map(|t| named_color(&t.to_lowercase()))
        .unwrap_or(Rgb([digest[0] / 2 + 40, digest[1] / 2 + 40, digest[2] / 2 + 40]));
    let shape = tags
        .iter()
        .find_map(|t| named_shape(&t.to_lowercase()))
        .unwrap_or(Shape::ALL[digest[3] as usize % Shape::ALL.len()]);
    (color, shape)
}

fn is_dark(c: Rgb<u8>) -> bool {
    299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32 <= 128 * 1000
}

/// Largest glyph scale (up to 3) at which `text` fits in the box.
fn fit_scale(text: &str, w: u32, h: u32) -> u32 {
    (1..=3)
        .rev()
        .find(|s| text_width(text, *s) + 8 <= w && GLYPH * s + 4 <= h)
        .unwrap_or(1)
}

/// Rasterize a simulator state. Identical states give identical pixels.
pub fn sim_render_image(scene: &SceneGraph, state: &SimState) -> RgbImage {
    let screen = scene.screen(&state.current).expect("state refers to scene");
    let bg = screen.background.map(Rgb).unwrap_or(WHITE);
    let ink = if is_dark(bg) { WHITE } else { BLACK };
    let mut img = RgbImage::from_pixel(scene.dims.width, scene.dims.height, bg);

    for el in &screen.elements {
        let b = el.bbox;
        let (x0, y0, x1, y1) = (b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64);
        match &el.kind {
            ElementKind::Text { content } => {
                let scale = fit_scale(content, b.width(), b.height());
                let ty = y0 + (b.height() as i64 - (GLYPH * scale) as i64) / 2;
                draw_text(&mut img, x0 + 4, ty.max(y0), content, scale, ink);
            }
            ElementKind::Icon { tags } => {
                let (color, shape) = icon_style(tags);
                fill_shape(&mut img, x0, y0, x1, y1, shape, color);
            }
            ElementKind::Input { .. } => {
                fill_rect(&mut img, x0, y0, x1, y1, WHITE);
                let focused = state.focused.as_deref() == Some(el.id.as_str());
                let border = if focused { FOCUS_BORDER } else { INPUT_BORDER };
                outline_rect(&mut img, x0, y0, x1, y1, 2, border);
                let text = state.buffer(el);
                if !text.is_empty() {
                    let scale = fit_scale(text, b.width(), b.height());
                    draw_text(&mut img, x0 + 6, y0 + 6, text, scale, BLACK);
                }
            }
        }
    }
    img
}
