use image::RgbImage;
use serde::{Deserialize, Serialize};

/// Side of the square grid both captures are reduced to.
pub const DIFF_GRID: usize = 64;
/// A cell counts as changed when its intensity moves by more than this.
pub const PIXEL_DELTA: f64 = 10.0 / 255.0;
/// Fraction of changed cells above which the screen counts as changed.
pub const DEFAULT_CHANGE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub changed: bool,
    pub fraction: f64,
}

/// Area-averaged grayscale reduction to a `DIFF_GRID x DIFF_GRID` grid, in [0, 1].
fn reduce(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0; DIFF_GRID * DIFF_GRID];
    if w == 0 || h == 0 {
        return out;
    }
    let span = |i: usize, n: usize| {
        let start = i * n / DIFF_GRID;
        let end = ((i + 1) * n / DIFF_GRID).max(start + 1).min(n);
        (start.min(n - 1), end)
    };
    let raw = img.as_raw();
    for gy in 0..DIFF_GRID {
        let (y0, y1) = span(gy, h);
        for gx in 0..DIFF_GRID {
            let (x0, x1) = span(gx, w);
            let mut sum = 0u64;
            for y in y0..y1 {
                let row = &raw[(y * w + x0) * 3..(y * w + x1) * 3];
                for px in row.chunks_exact(3) {
                    sum += 299 * px[0] as u64 + 587 * px[1] as u64 + 114 * px[2] as u64;
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out[gy * DIFF_GRID + gx] = sum as f64 / (1000.0 * 255.0 * count);
        }
    }
    out
}

/// Compare two captures on a coarse grayscale grid.
///
/// Captures of different sizes are each reduced to the same grid, so the
/// comparison is symmetric in its arguments.
pub fn screen_changed(prev: &RgbImage, cur: &RgbImage, tolerance: f64) -> ChangeReport {
    let a = reduce(prev);
    let b = reduce(cur);
    let differing = a.iter().zip(&b).filter(|(x, y)| (*x - *y).abs() > PIXEL_DELTA).count();
    let fraction = differing as f64 / (DIFF_GRID * DIFF_GRID) as f64;
    ChangeReport { changed: fraction > tolerance, fraction }
}
