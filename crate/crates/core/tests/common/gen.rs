//! Randomized grounding fixtures.

use std::collections::{BTreeMap, BTreeSet};

use image::{Rgb, RgbImage};
use mobile_agent::action::Position;
use mobile_agent::perception::{
    locate_icon, locate_text, normalize_text, position_filter, BackendError, BoundingBox, DetectorBackend, Dims,
    EmbedderBackend, GroundingOutcome, GroundingParams, IconCandidate, OcrBackend, PerceptionBackends, TextRegion,
};
use mobile_agent::simulator::{
    jaccard, oracle_backends, sim_render_image, word_set, Element, ElementKind, SceneGraph, Screen, SimState,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const TARGETS: &[&str] = &["Save", "New note", "Settings", "OK", "Send message"];
const DISTRACTORS: &[&str] = &["Cancel", "Back", "Display", "Wi-Fi", "Battery", "Inbox", "Photos"];

/// OCR that always answers with the same regions.
pub struct FixedOcr(pub Vec<TextRegion>);

impl OcrBackend for FixedOcr {
    fn recognize(&self, _: &RgbImage) -> Result<Vec<TextRegion>, BackendError> {
        Ok(self.0.clone())
    }
}
impl DetectorBackend for FixedOcr {
    fn detect(&self, _: &RgbImage, _: &str) -> Result<Vec<BoundingBox>, BackendError> {
        Ok(Vec::new())
    }
}
impl EmbedderBackend for FixedOcr {
    fn score(&self, c: &[IconCandidate], _: &str) -> Result<Vec<f64>, BackendError> {
        Ok(vec![0.0; c.len()])
    }
}

pub struct OcrFixture {
    pub screen: RgbImage,
    pub target: String,
    pub regions: Vec<TextRegion>,
    /// Regions that match the target.
    pub matching: usize,
    pub backends: PerceptionBackends,
}

fn vary_case<R: Rng>(rng: &mut R, text: &str) -> String {
    let t = match rng.gen_range(0..3) {
        0 => text.to_string(),
        1 => text.to_uppercase(),
        _ => text.to_lowercase(),
    };
    let t = t.replace(' ', if rng.gen_bool(0.3) { "  " } else { " " });
    if rng.gen_bool(0.2) {
        format!(" {t} ")
    } else {
        t
    }
}

/// A box inside the screen, optionally allowed to run past the right or
/// bottom edge.
fn random_box<R: Rng>(rng: &mut R, dims: Dims, overflow: bool) -> BoundingBox {
    let w = rng.gen_range(8..=dims.width.min(200));
    let h = rng.gen_range(8..=dims.height.min(80));
    let x = rng.gen_range(0..dims.width - w / 2);
    let y = rng.gen_range(0..dims.height - h / 2);
    let (x1, y1) = if overflow { (x + w, y + h) } else { ((x + w).min(dims.width), (y + h).min(dims.height)) };
    BoundingBox::new(x, y, x1.max(x + 1), y1.max(y + 1)).unwrap()
}

pub fn ocr_fixture<R: Rng>(rng: &mut R) -> OcrFixture {
    let dims = Dims::new(rng.gen_range(120..900), rng.gen_range(160..1400));
    let target = TARGETS.choose(rng).unwrap().to_string();
    let matching = rng.gen_range(0..=9);
    let others = rng.gen_range(0..6);
    let mut regions = Vec::new();
    for _ in 0..matching {
        let overflow = rng.gen_bool(0.2);
        regions.push(TextRegion {
            content: vary_case(rng, &target),
            bbox: random_box(rng, dims, overflow),
            confidence: rng.gen_range(0.0..=1.0),
        });
    }
    for _ in 0..others {
        regions.push(TextRegion {
            content: DISTRACTORS.choose(rng).unwrap().to_string(),
            bbox: random_box(rng, dims, false),
            confidence: rng.gen_range(0.0..=1.0),
        });
    }
    regions.shuffle(rng);
    let color = Rgb([rng.gen(), rng.gen(), rng.gen()]);
    let screen = RgbImage::from_pixel(dims.width, dims.height, color);
    let backends = PerceptionBackends::uniform(FixedOcr(regions.clone()));
    OcrFixture { screen, target, regions, matching, backends }
}

const ICON_WORDS: &[&str] = &["red", "blue", "gear", "heart", "plus", "round", "star", "bell", "share", "menu"];

/// A single-screen scene of icons plus a description and positions to ground.
pub struct IconScene {
    pub scene: SceneGraph,
    pub description: String,
    pub positions: Vec<Position>,
}

pub fn icon_scene<R: Rng>(rng: &mut R) -> IconScene {
    let dims = Dims::new(540, 960);
    let count = rng.gen_range(1..=8);
    let mut elements: Vec<Element> = Vec::new();
    while elements.len() < count {
        let size = rng.gen_range(30..=100);
        let x = rng.gen_range(0..=dims.width - size);
        let y = rng.gen_range(0..=dims.height - size);
        let bbox = BoundingBox::new(x, y, x + size, y + size).unwrap();
        if elements.iter().any(|e| e.bbox == bbox) {
            continue;
        }
        let n = rng.gen_range(1..=4);
        let tags: BTreeSet<String> = ICON_WORDS.choose_multiple(rng, n).map(|s| s.to_string()).collect();
        elements.push(Element { id: format!("icon{}", elements.len()), kind: ElementKind::Icon { tags }, bbox });
    }
    let n = rng.gen_range(1..=3);
    let description = ICON_WORDS.choose_multiple(rng, n).copied().collect::<Vec<_>>().join(" ");
    let positions = match rng.gen_range(0..4) {
        0 => vec![],
        1 => vec![*Position::ALL.choose(rng).unwrap()],
        _ => {
            let vertical = *[Position::Top, Position::Bottom].choose(rng).unwrap();
            let horizontal = *[Position::Left, Position::Right].choose(rng).unwrap();
            vec![vertical, horizontal]
        }
    };
    IconScene { scene: single_screen(dims, elements), description, positions }
}

pub fn single_screen(dims: Dims, elements: Vec<Element>) -> SceneGraph {
    let scene = SceneGraph {
        name: "generated".into(),
        dims,
        initial: "home".into(),
        app_catalog: BTreeMap::new(),
        screens: BTreeMap::from([(
            "home".to_string(),
            Screen { elements, transitions: vec![], background: None },
        )]),
    };
    scene.validate().expect("generated scene is valid");
    scene
}

/// Check one OCR fixture against the match-count decision rules.
pub fn check_ocr_fixture(fx: &OcrFixture, params: &GroundingParams) -> Result<(), String> {
    let dims = Dims::new(fx.screen.width(), fx.screen.height());
    let outcome = locate_text(&fx.screen, &fx.target, &fx.backends, params).map_err(|e| e.to_string())?;
    let matched: Vec<&TextRegion> = fx
        .regions
        .iter()
        .filter(|r| normalize_text(&r.content) == normalize_text(&fx.target))
        .collect();
    match (&outcome, fx.matching) {
        (GroundingOutcome::NotFound, 0) => Ok(()),
        (GroundingOutcome::Resolved { point }, 1) => {
            let b = matched[0].bbox;
            if b.contains(*point) && dims.contains(*point) {
                Ok(())
            } else {
                Err(format!("point {point:?} outside {b}"))
            }
        }
        (GroundingOutcome::Ambiguous { candidates }, n) if n >= 2 && n <= params.many_threshold => {
            if candidates.len() != n {
                return Err(format!("{} candidates for {n} matches", candidates.len()));
            }
            for (i, c) in candidates.iter().enumerate() {
                if c.index != i + 1 {
                    return Err(format!("candidate {i} labeled {}", c.index));
                }
                if !c.padded.contains_box(&c.bbox) || !c.padded.within(dims) {
                    return Err(format!("padded {} does not contain {} within {dims}", c.padded, c.bbox));
                }
                if c.image.dimensions() != (c.padded.width(), c.padded.height()) {
                    return Err("crop size differs from padded box".into());
                }
            }
            Ok(())
        }
        (GroundingOutcome::TooMany { count }, n) if n > params.many_threshold && *count == n => Ok(()),
        (o, n) => Err(format!("{n} matches gave {o:?}")),
    }
}

/// Expected winner among position survivors: highest Jaccard score, then
/// topmost, then leftmost. Returns the winner and whether its score was strictly maximal.
pub fn expected_icon(fx: &IconScene) -> Option<(BoundingBox, bool)> {
    let screen = &fx.scene.screens["home"];
    let boxes: Vec<BoundingBox> = screen.elements.iter().map(|e| e.bbox).collect();
    let survivors = position_filter(&boxes, &fx.positions, fx.scene.dims);
    let words = word_set(&fx.description);
    let scored: Vec<(BoundingBox, f64)> = survivors
        .iter()
        .map(|b| {
            let e = screen.elements.iter().find(|e| e.bbox == *b).unwrap();
            let ElementKind::Icon { tags } = &e.kind else { unreachable!() };
            (*b, jaccard(tags, &words))
        })
        .collect();
    let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let mut top: Vec<BoundingBox> = scored.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    top.sort_by_key(|b| (b.y_min, b.x_min, b.y_max, b.x_max));
    top.first().map(|b| (*b, top.len() == 1))
}

/// Ground the icon with oracle backends and compare with [`expected_icon`].
pub fn check_icon_scene(fx: &IconScene) -> Result<bool, String> {
    let state = SimState::initial(&fx.scene);
    let backends = oracle_backends(&fx.scene, &state);
    let screen = sim_render_image(&fx.scene, &state);
    let outcome = locate_icon(&screen, &fx.description, &fx.positions, &backends).map_err(|e| e.to_string())?;
    match (expected_icon(fx), outcome) {
        (None, GroundingOutcome::NotFound) => Ok(false),
        (Some((b, strict)), GroundingOutcome::Resolved { point }) if point == b.center() => Ok(strict),
        (e, o) => Err(format!("expected {e:?}, got {o:?}")),
    }
}
