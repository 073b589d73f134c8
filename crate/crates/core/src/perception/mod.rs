//! Visual grounding: turning `ClickText` / `ClickIcon` targets into screen
//! coordinates using OCR, an open-vocabulary detector and an image-text
//! embedder.
//!
//! Text targets go through a match-count decision: no match is
//! [`GroundingOutcome::NotFound`], one match resolves to the box center, a few
//! matches come back as annotated crops for the agent to choose from, and too
//! many give [`GroundingOutcome::TooMany`]. Icon targets are detected with the
//! query `"icon"`, filtered by the requested screen positions and resolved to
//! the candidate with the highest similarity to the description.

mod annotate;
mod geometry;
pub mod http;

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::action::Position;

pub use annotate::{annotate_crop, crop, OUTLINE_PX};
pub use geometry::{BoundingBox, Dims, InvalidBox, Point};

/// Query sent to the detector for icon localization.
pub const ICON_QUERY: &str = "icon";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRegion {
    pub content: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// A detected icon box with its pixels, scored lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct IconCandidate {
    pub bbox: BoundingBox,
    pub crop: RgbImage,
    pub similarity: Option<f64>,
}

/// One of several text matches, shown to the agent for disambiguation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedCandidate {
    /// 1-based label drawn on the crop.
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub padded: BoundingBox,
    #[serde(skip)]
    pub image: RgbImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GroundingOutcome {
    Resolved { point: Point },
    Ambiguous { candidates: Vec<AnnotatedCandidate> },
    NotFound,
    TooMany { count: usize },
}

impl GroundingOutcome {
    pub fn point(&self) -> Option<Point> {
        match self {
            GroundingOutcome::Resolved { point } => Some(*point),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ocr,
    Detector,
    Embedder,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Ocr => "ocr",
            Stage::Detector => "detector",
            Stage::Embedder => "embedder",
        })
    }
}

/// Failure inside a perception backend.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no scene element matches crop box {0}")]
    OracleMismatch(BoundingBox),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("{stage} backend failed: {source}")]
    BackendFailure { stage: Stage, source: BackendError },
    #[error("embedder returned {got} scores for {expected} crops")]
    ScoreCountMismatch { expected: usize, got: usize },
    #[error("invalid grounding input: {0}")]
    InvalidInput(&'static str),
}

pub trait OcrBackend: Send + Sync {
    fn recognize(&self, screen: &RgbImage) -> Result<Vec<TextRegion>, BackendError>;
}

pub trait DetectorBackend: Send + Sync {
    fn detect(&self, screen: &RgbImage, query: &str) -> Result<Vec<BoundingBox>, BackendError>;
}

/// Scores each candidate crop against a text description; one score per
/// candidate, order-aligned.
pub trait EmbedderBackend: Send + Sync {
    fn score(&self, candidates: &[IconCandidate], text: &str) -> Result<Vec<f64>, BackendError>;
}

/// The three perception roles. Implementations must be deterministic for
/// identical inputs within a session so traces can be replayed.
#[derive(Clone)]
pub struct PerceptionBackends {
    pub ocr: Arc<dyn OcrBackend>,
    pub detector: Arc<dyn DetectorBackend>,
    pub embedder: Arc<dyn EmbedderBackend>,
}

impl PerceptionBackends {
    /// Use one value for all three roles.
    pub fn uniform<B>(backend: B) -> Self
    where
        B: OcrBackend + DetectorBackend + EmbedderBackend + 'static,
    {
        let shared = Arc::new(backend);
        Self { ocr: shared.clone(), detector: shared.clone(), embedder: shared }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingParams {
    /// Match counts above this give `TooMany`.
    pub many_threshold: usize,
    /// Per-side crop padding as a fraction of the larger box side.
    pub pad_factor: f64,
}

impl Default for GroundingParams {
    fn default() -> Self {
        Self { many_threshold: 5, pad_factor: 0.25 }
    }
}

/// Case-fold, trim and collapse internal whitespace.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Regions whose text equals `target` after normalization, falling back to
/// regions that contain it. Input order is preserved.
pub fn match_text<'a>(regions: &'a [TextRegion], target: &str) -> Vec<&'a TextRegion> {
    let target = normalize_text(target);
    if target.is_empty() {
        return Vec::new();
    }
    let normalized: Vec<String> = regions.iter().map(|r| normalize_text(&r.content)).collect();
    let exact: Vec<&TextRegion> = regions
        .iter()
        .zip(&normalized)
        .filter(|(_, n)| **n == target)
        .map(|(r, _)| r)
        .collect();
    if !exact.is_empty() {
        return exact;
    }
    regions
        .iter()
        .zip(&normalized)
        .filter(|(_, n)| n.contains(&target))
        .map(|(r, _)| r)
        .collect()
}

/// Extend each side by `round(pad_factor * max(w, h))`, clamped to the screen.
pub fn pad_box(bbox: BoundingBox, screen: Dims, pad_factor: f64) -> BoundingBox {
    let pad = (pad_factor.max(0.0) * bbox.width().max(bbox.height()) as f64).round() as u32;
    BoundingBox {
        x_min: bbox.x_min.saturating_sub(pad),
        y_min: bbox.y_min.saturating_sub(pad),
        x_max: bbox.x_max.saturating_add(pad).min(screen.width).max(bbox.x_max),
        y_max: bbox.y_max.saturating_add(pad).min(screen.height).max(bbox.y_max),
    }
}

fn satisfies(position: Position, c: Point, screen: Dims) -> bool {
    let (w, h) = (screen.width as u64, screen.height as u64);
    let (x, y) = (c.x as u64, c.y as u64);
    match position {
        Position::Top => 2 * y < h,
        Position::Bottom => 2 * y >= h,
        Position::Left => 2 * x < w,
        Position::Right => 2 * x >= w,
        Position::Center => 3 * x >= w && 3 * x <= 2 * w && 3 * y >= h && 3 * y <= 2 * h,
    }
}

/// Boxes whose centers satisfy every listed position.
pub fn position_filter(boxes: &[BoundingBox], positions: &[Position], screen: Dims) -> Vec<BoundingBox> {
    boxes
        .iter()
        .filter(|b| positions.iter().all(|p| satisfies(*p, b.center(), screen)))
        .copied()
        .collect()
}

fn screen_dims(screen: &RgbImage) -> Dims {
    Dims::new(screen.width(), screen.height())
}

/// Ground a `ClickText` target.
pub fn locate_text(
    screen: &RgbImage,
    target: &str,
    backends: &PerceptionBackends,
    params: &GroundingParams,
) -> Result<GroundingOutcome, PerceptionError> {
    if target.trim().is_empty() {
        return Err(PerceptionError::InvalidInput("empty text target"));
    }
    let dims = screen_dims(screen);
    if dims.width == 0 || dims.height == 0 {
        return Err(PerceptionError::InvalidInput("empty screen"));
    }
    let regions: Vec<TextRegion> = backends
        .ocr
        .recognize(screen)
        .map_err(|source| PerceptionError::BackendFailure { stage: Stage::Ocr, source })?
        .into_iter()
        .filter_map(|r| {
            let bbox = BoundingBox::clamped(
                [r.bbox.x_min as i64, r.bbox.y_min as i64, r.bbox.x_max as i64, r.bbox.y_max as i64],
                dims,
            )?;
            Some(TextRegion { bbox, confidence: r.confidence.clamp(0.0, 1.0), ..r })
        })
        .collect();

    let matches = match_text(&regions, target);
    debug!(target, matches = matches.len(), "text grounding");
    Ok(match matches.len() {
        0 => GroundingOutcome::NotFound,
        1 => GroundingOutcome::Resolved { point: matches[0].bbox.center() },
        n if n <= params.many_threshold => GroundingOutcome::Ambiguous {
            candidates: matches
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let padded = pad_box(r.bbox, dims, params.pad_factor);
                    AnnotatedCandidate {
                        index: i + 1,
                        bbox: r.bbox,
                        padded,
                        image: annotate_crop(screen, padded, r.bbox, i + 1),
                    }
                })
                .collect(),
        },
        n => GroundingOutcome::TooMany { count: n },
    })
}

/// Total order used to pick the winning icon: higher score first, then
/// topmost, then leftmost.
fn icon_rank(a: &(BoundingBox, f64), b: &(BoundingBox, f64)) -> std::cmp::Ordering {
    let score = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    score(b.1)
        .partial_cmp(&score(a.1))
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.0.y_min.cmp(&b.0.y_min))
        .then(a.0.x_min.cmp(&b.0.x_min))
        .then(a.0.y_max.cmp(&b.0.y_max))
        .then(a.0.x_max.cmp(&b.0.x_max))
}

/// Ground a `ClickIcon` target.
pub fn locate_icon(
    screen: &RgbImage,
    description: &str,
    positions: &[Position],
    backends: &PerceptionBackends,
) -> Result<GroundingOutcome, PerceptionError> {
    if description.trim().is_empty() {
        return Err(PerceptionError::InvalidInput("empty icon description"));
    }
    let dims = screen_dims(screen);
    let detected = backends
        .detector
        .detect(screen, ICON_QUERY)
        .map_err(|source| PerceptionError::BackendFailure { stage: Stage::Detector, source })?;
    let boxes: Vec<BoundingBox> = detected
        .into_iter()
        .filter_map(|b| {
            BoundingBox::clamped([b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64], dims)
        })
        .collect();
    let surviving = position_filter(&boxes, positions, dims);
    if surviving.is_empty() {
        return Ok(GroundingOutcome::NotFound);
    }

    let candidates: Vec<IconCandidate> = surviving
        .iter()
        .map(|b| IconCandidate { bbox: *b, crop: crop(screen, *b), similarity: None })
        .collect();
    let scores = backends
        .embedder
        .score(&candidates, description)
        .map_err(|source| PerceptionError::BackendFailure { stage: Stage::Embedder, source })?;
    if scores.len() != candidates.len() {
        return Err(PerceptionError::ScoreCountMismatch { expected: candidates.len(), got: scores.len() });
    }

    let mut ranked: Vec<(BoundingBox, f64)> = surviving.into_iter().zip(scores).collect();
    ranked.sort_by(icon_rank);
    debug!(description, best = %ranked[0].0, score = ranked[0].1, "icon grounding");
    Ok(GroundingOutcome::Resolved { point: ranked[0].0.center() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use std::sync::Mutex;

    fn bx(a: u32, b: u32, c: u32, d: u32) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    fn region(text: &str, b: BoundingBox) -> TextRegion {
        TextRegion { content: text.into(), bbox: b, confidence: 0.9 }
    }

    struct Fixed {
        regions: Vec<TextRegion>,
        boxes: Vec<BoundingBox>,
        scores: Vec<f64>,
        seen_query: Mutex<Option<String>>,
    }

    impl Fixed {
        fn text(regions: Vec<TextRegion>) -> PerceptionBackends {
            PerceptionBackends::uniform(Fixed { regions, boxes: vec![], scores: vec![], seen_query: Mutex::new(None) })
        }
        fn icons(boxes: Vec<BoundingBox>, scores: Vec<f64>) -> PerceptionBackends {
            PerceptionBackends::uniform(Fixed { regions: vec![], boxes, scores, seen_query: Mutex::new(None) })
        }
    }

    impl OcrBackend for Fixed {
        fn recognize(&self, _: &RgbImage) -> Result<Vec<TextRegion>, BackendError> {
            Ok(self.regions.clone())
        }
    }
    impl DetectorBackend for Fixed {
        fn detect(&self, _: &RgbImage, query: &str) -> Result<Vec<BoundingBox>, BackendError> {
            *self.seen_query.lock().unwrap() = Some(query.to_string());
            Ok(self.boxes.clone())
        }
    }
    impl EmbedderBackend for Fixed {
        fn score(&self, c: &[IconCandidate], _: &str) -> Result<Vec<f64>, BackendError> {
            for cand in c {
                assert_eq!(cand.crop.dimensions(), (cand.bbox.width(), cand.bbox.height()));
            }
            Ok(self.scores[..c.len()].to_vec())
        }
    }

    struct Failing;
    impl OcrBackend for Failing {
        fn recognize(&self, _: &RgbImage) -> Result<Vec<TextRegion>, BackendError> {
            Err(BackendError::Timeout)
        }
    }
    impl DetectorBackend for Failing {
        fn detect(&self, _: &RgbImage, _: &str) -> Result<Vec<BoundingBox>, BackendError> {
            Err(BackendError::Transport("refused".into()))
        }
    }
    impl EmbedderBackend for Failing {
        fn score(&self, _: &[IconCandidate], _: &str) -> Result<Vec<f64>, BackendError> {
            Err(BackendError::Timeout)
        }
    }

    fn screen() -> RgbImage {
        RgbImage::from_pixel(1080, 1920, Rgb([255, 255, 255]))
    }

    #[test]
    fn match_text_rules() {
        let rs = vec![region("Settings", bx(0, 0, 10, 10)), region("Network", bx(0, 10, 10, 20))];
        let m = match_text(&rs, "Settings");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].content, "Settings");

        let rs = vec![region("  settings ", bx(0, 0, 10, 10))];
        assert_eq!(match_text(&rs, "Settings").len(), 1);

        let rs = vec![region("Open Settings", bx(0, 0, 10, 10)), region("Wi-Fi", bx(0, 10, 10, 20))];
        assert_eq!(match_text(&rs, "Settings")[0].content, "Open Settings");

        // exact matches shadow substring ones
        let rs = vec![region("Open Settings", bx(0, 0, 10, 10)), region("settings", bx(0, 10, 10, 20))];
        let m = match_text(&rs, "Settings");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].content, "settings");
    }

    #[test]
    fn single_match_resolves_to_center() {
        let b = Fixed::text(vec![region("Save", bx(100, 200, 300, 260))]);
        let out = locate_text(&screen(), "Save", &b, &GroundingParams::default()).unwrap();
        assert_eq!(out, GroundingOutcome::Resolved { point: Point::new(200, 230) });
    }

    #[test]
    fn zero_and_many_matches() {
        let b = Fixed::text(vec![region("Cancel", bx(0, 0, 50, 50))]);
        assert_eq!(
            locate_text(&screen(), "Save", &b, &GroundingParams::default()).unwrap(),
            GroundingOutcome::NotFound
        );
        let seven: Vec<TextRegion> = (0..7).map(|i| region("Item", bx(10, 100 * i + 10, 200, 100 * i + 60))).collect();
        let b = Fixed::text(seven);
        assert_eq!(
            locate_text(&screen(), "Item", &b, &GroundingParams::default()).unwrap(),
            GroundingOutcome::TooMany { count: 7 }
        );
    }

    #[test]
    fn few_matches_are_annotated_in_order() {
        let b = Fixed::text(vec![region("OK", bx(10, 10, 110, 60)), region("OK", bx(500, 900, 600, 950))]);
        match locate_text(&screen(), "ok", &b, &GroundingParams::default()).unwrap() {
            GroundingOutcome::Ambiguous { candidates } => {
                assert_eq!(candidates.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 2]);
                assert_eq!(candidates[0].bbox, bx(10, 10, 110, 60));
                assert_eq!(candidates[0].padded, bx(0, 0, 135, 85));
                for c in &candidates {
                    assert_eq!(c.image.dimensions(), (c.padded.width(), c.padded.height()));
                }
            }
            other => panic!("expected ambiguous, got {other:?}"),
        }
    }

    #[test]
    fn backend_failures_carry_stage() {
        let b = PerceptionBackends::uniform(Failing);
        assert_eq!(
            locate_text(&screen(), "x", &b, &GroundingParams::default()),
            Err(PerceptionError::BackendFailure { stage: Stage::Ocr, source: BackendError::Timeout })
        );
        assert!(matches!(
            locate_icon(&screen(), "x", &[Position::Top], &b),
            Err(PerceptionError::BackendFailure { stage: Stage::Detector, .. })
        ));
    }

    #[test]
    fn pad_box_examples() {
        let s = Dims::new(1080, 1920);
        assert_eq!(pad_box(bx(100, 200, 300, 260), s, 0.25), bx(50, 150, 350, 310));
        assert_eq!(pad_box(bx(0, 0, 100, 50), s, 0.25).x_min, 0);
        assert_eq!(pad_box(bx(100, 200, 300, 260), s, 0.0), bx(100, 200, 300, 260));
        assert_eq!(pad_box(bx(1000, 1900, 1080, 1920), s, 0.25), bx(980, 1880, 1080, 1920));
    }

    #[test]
    fn position_filter_examples() {
        let s = Dims::new(1000, 1000);
        let around = |x: u32, y: u32| bx(x - 10, y - 10, x + 10, y + 10);
        let boxes = vec![around(100, 100), around(100, 900)];
        assert_eq!(position_filter(&boxes, &[Position::Top], s), vec![around(100, 100)]);

        let boxes = vec![around(100, 100), around(900, 100)];
        assert_eq!(position_filter(&boxes, &[Position::Top, Position::Left], s), vec![around(100, 100)]);

        assert_eq!(position_filter(&[around(500, 500)], &[Position::Center], s), vec![around(500, 500)]);
        assert!(position_filter(&[around(100, 500)], &[Position::Center], s).is_empty());
    }

    #[test]
    fn icon_argmax_and_tie_break() {
        let boxes = vec![bx(10, 10, 60, 60), bx(200, 300, 260, 360)];
        let b = Fixed::icons(boxes.clone(), vec![0.31, 0.22]);
        assert_eq!(
            locate_icon(&screen(), "cart", &[Position::Top], &b).unwrap(),
            GroundingOutcome::Resolved { point: boxes[0].center() }
        );

        // equal scores: topmost wins regardless of detector order
        let boxes = vec![bx(200, 300, 260, 360), bx(400, 10, 460, 70)];
        let b = Fixed::icons(boxes.clone(), vec![0.5, 0.5]);
        assert_eq!(
            locate_icon(&screen(), "cart", &[Position::Top], &b).unwrap(),
            GroundingOutcome::Resolved { point: boxes[1].center() }
        );
    }

    #[test]
    fn icon_uses_icon_query_and_handles_empty() {
        let fixed = Fixed { regions: vec![], boxes: vec![], scores: vec![], seen_query: Mutex::new(None) };
        let shared = Arc::new(fixed);
        let b = PerceptionBackends { ocr: shared.clone(), detector: shared.clone(), embedder: shared.clone() };
        assert_eq!(locate_icon(&screen(), "bell", &[Position::Top], &b).unwrap(), GroundingOutcome::NotFound);
        assert_eq!(shared.seen_query.lock().unwrap().as_deref(), Some(ICON_QUERY));
    }

    #[test]
    fn score_count_mismatch_is_an_error() {
        struct Short;
        impl OcrBackend for Short {
            fn recognize(&self, _: &RgbImage) -> Result<Vec<TextRegion>, BackendError> {
                Ok(vec![])
            }
        }
        impl DetectorBackend for Short {
            fn detect(&self, _: &RgbImage, _: &str) -> Result<Vec<BoundingBox>, BackendError> {
                Ok(vec![bx(0, 0, 10, 10), bx(20, 0, 30, 10)])
            }
        }
        impl EmbedderBackend for Short {
            fn score(&self, _: &[IconCandidate], _: &str) -> Result<Vec<f64>, BackendError> {
                Ok(vec![1.0])
            }
        }
        let b = PerceptionBackends::uniform(Short);
        assert_eq!(
            locate_icon(&screen(), "x", &[Position::Left], &b),
            Err(PerceptionError::ScoreCountMismatch { expected: 2, got: 1 })
        );
    }
}
