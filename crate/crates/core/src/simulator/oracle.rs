use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use image::RgbImage;

use super::{ElementKind, SceneGraph, SimState};
use crate::perception::{
    BackendError, BoundingBox, DetectorBackend, EmbedderBackend, IconCandidate, OcrBackend, PerceptionBackends,
    TextRegion, ICON_QUERY,
};

#[derive(Clone)]
enum StateSource {
    Snapshot(SimState),
    Live(Arc<Mutex<SimState>>),
}

/// Ground-truth perception for a simulated screen: OCR returns the text and
/// input elements, the detector returns icon boxes and the embedder scores
/// tag/description word overlap.
#[derive(Clone)]
pub struct OracleBackends {
    scene: Arc<SceneGraph>,
    state: StateSource,
}

impl OracleBackends {
    pub fn snapshot(scene: Arc<SceneGraph>, state: SimState) -> Self {
        Self { scene, state: StateSource::Snapshot(state) }
    }

    pub fn live(scene: Arc<SceneGraph>, state: Arc<Mutex<SimState>>) -> Self {
        Self { scene, state: StateSource::Live(state) }
    }

    fn current(&self) -> SimState {
        match &self.state {
            StateSource::Snapshot(s) => s.clone(),
            StateSource::Live(s) => s.lock().expect("sim state lock").clone(),
        }
    }

    pub fn into_backends(self) -> PerceptionBackends {
        PerceptionBackends::uniform(self)
    }
}

/// Perception backends answering from `state` on `scene`.
pub fn oracle_backends(scene: &SceneGraph, state: &SimState) -> PerceptionBackends {
    OracleBackends::snapshot(Arc::new(scene.clone()), state.clone()).into_backends()
}

/// Lowercased alphanumeric words.
pub fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// |a ∩ b| / |a ∪ b|, zero when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

impl OcrBackend for OracleBackends {
    fn recognize(&self, _screen: &RgbImage) -> Result<Vec<TextRegion>, BackendError> {
        let state = self.current();
        let screen = self.scene.screen(&state.current).expect("state refers to scene");
        Ok(screen
            .elements
            .iter()
            .filter_map(|e| {
                let content = match &e.kind {
                    ElementKind::Text { content } => content.clone(),
                    ElementKind::Input { .. } => state.buffer(e).to_string(),
                    ElementKind::Icon { .. } => return None,
                };
                (!content.trim().is_empty()).then_some(TextRegion { content, bbox: e.bbox, confidence: 1.0 })
            })
            .collect())
    }
}

impl DetectorBackend for OracleBackends {
    fn detect(&self, _screen: &RgbImage, query: &str) -> Result<Vec<BoundingBox>, BackendError> {
        let state = self.current();
        let screen = self.scene.screen(&state.current).expect("state refers to scene");
        let everything = query.trim().eq_ignore_ascii_case(ICON_QUERY);
        let words = word_set(query);
        Ok(screen
            .elements
            .iter()
            .filter_map(|e| match &e.kind {
                ElementKind::Icon { tags } if everything || tags.iter().any(|t| words.contains(&t.to_lowercase())) => {
                    Some(e.bbox)
                }
                _ => None,
            })
            .collect())
    }
}

impl EmbedderBackend for OracleBackends {
    fn score(&self, candidates: &[IconCandidate], text: &str) -> Result<Vec<f64>, BackendError> {
        let state = self.current();
        let screen = self.scene.screen(&state.current).expect("state refers to scene");
        let words = word_set(text);
        candidates
            .iter()
            .map(|c| {
                let tags = screen
                    .elements
                    .iter()
                    .find_map(|e| match &e.kind {
                        ElementKind::Icon { tags } if e.bbox == c.bbox => Some(tags),
                        _ => None,
                    })
                    .ok_or(BackendError::OracleMismatch(c.bbox))?;
                let tags: BTreeSet<String> = tags.iter().map(|t| t.to_lowercase()).collect();
                Ok(jaccard(&tags, &words))
            })
            .collect()
    }
}
