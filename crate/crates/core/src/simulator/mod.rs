//! A deterministic scene-graph device.
//!
//! Screens hold elements (text labels, icons, text inputs) and transitions
//! fired by taps, scrolls or app launches. [`sim_execute`] applies one device
//! command to a [`SimState`]; [`sim_render`] rasterizes a state. Together with
//! [`OracleBackends`] the whole agent loop runs without hardware, models or
//! network.

mod oracle;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ScrollDirection;
use crate::codec::sha256_hex;
use crate::device::{Device, DeviceCommand, DeviceError, DeviceInfo, ScreenCapture, KEYCODE_BACK, KEYCODE_HOME};
use crate::perception::{BoundingBox, Dims, Point};

pub use oracle::{jaccard, oracle_backends, word_set, OracleBackends};
pub use render::sim_render_image;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ElementKind {
    Text {
        content: String,
    },
    Icon {
        tags: BTreeSet<String>,
    },
    Input {
        /// Initial buffer contents.
        #[serde(default, skip_serializing_if = "String::is_empty")]
        content: String,
        /// Focused when its screen is entered.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        focused: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    #[serde(flatten)]
    pub kind: ElementKind,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Tap(String),
    Scroll(ScrollDirection),
    Launch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub trigger: Trigger,
    pub to: String,
    /// Input element to focus on arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[u8; 3]>,
}

impl Screen {
    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    fn transition(&self, trigger: &Trigger) -> Option<&Transition> {
        self.transitions.iter().find(|t| &t.trigger == trigger)
    }

    /// Last element in list order containing the point.
    pub fn hit(&self, p: Point) -> Option<&Element> {
        self.elements.iter().rev().find(|e| e.bbox.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    #[serde(default)]
    pub name: String,
    #[serde(with = "dims_array")]
    pub dims: Dims,
    pub initial: String,
    /// Display name -> screen id.
    pub app_catalog: BTreeMap<String, String>,
    pub screens: BTreeMap<String, Screen>,
}

mod dims_array {
    use super::Dims;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &Dims, s: S) -> Result<S::Ok, S::Error> {
        [d.width, d.height].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Dims, D::Error> {
        let [w, h] = <[u32; 2]>::deserialize(d)?;
        Ok(Dims::new(w, h))
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

impl SceneGraph {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: SceneGraph = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn screen(&self, id: &str) -> Option<&Screen> {
        self.screens.get(id)
    }

    /// Stable identity of the scene content, independent of file formatting.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("scene serializes"))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if self.dims.width == 0 || self.dims.height == 0 {
            return bad("dims must be positive".into());
        }
        if !self.screens.contains_key(&self.initial) {
            return bad(format!("initial screen {:?} does not exist", self.initial));
        }
        for (name, target) in &self.app_catalog {
            if !self.screens.contains_key(target) {
                return bad(format!("app {name:?} points at missing screen {target:?}"));
            }
        }
        for (sid, screen) in &self.screens {
            let mut ids = BTreeSet::new();
            for e in &screen.elements {
                if !ids.insert(e.id.as_str()) {
                    return bad(format!("screen {sid:?}: duplicate element id {:?}", e.id));
                }
                if !e.bbox.within(self.dims) {
                    return bad(format!("screen {sid:?}: element {:?} box {} exceeds {}", e.id, e.bbox, self.dims));
                }
                match &e.kind {
                    ElementKind::Text { content } if content.trim().is_empty() => {
                        return bad(format!("screen {sid:?}: text element {:?} is empty", e.id));
                    }
                    ElementKind::Icon { tags } if tags.is_empty() => {
                        return bad(format!("screen {sid:?}: icon element {:?} has no tags", e.id));
                    }
                    _ => {}
                }
            }
            let mut triggers = BTreeSet::new();
            for t in &screen.transitions {
                if !triggers.insert(format!("{:?}", t.trigger)) {
                    return bad(format!("screen {sid:?}: more than one transition for {:?}", t.trigger));
                }
                let Some(target) = self.screens.get(&t.to) else {
                    return bad(format!("screen {sid:?}: transition to missing screen {:?}", t.to));
                };
                if let Trigger::Tap(id) = &t.trigger {
                    if screen.element(id).is_none() {
                        return bad(format!("screen {sid:?}: tap trigger on missing element {id:?}"));
                    }
                }
                if let Some(f) = &t.focus {
                    if !matches!(target.element(f).map(|e| &e.kind), Some(ElementKind::Input { .. })) {
                        return bad(format!("screen {sid:?}: focus target {f:?} is not an input on {:?}", t.to));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimState {
    pub current: String,
    pub nav_stack: Vec<String>,
    /// Input buffers keyed by element id; screens reusing an id share the buffer.
    pub buffers: BTreeMap<String, String>,
    pub focused: Option<String>,
    pub visited: BTreeSet<String>,
    /// Number of commands that changed the state.
    pub steps: u64,
}

impl SimState {
    pub fn initial(scene: &SceneGraph) -> Self {
        let mut s = SimState {
            current: scene.initial.clone(),
            nav_stack: vec![scene.initial.clone()],
            buffers: BTreeMap::new(),
            focused: None,
            visited: BTreeSet::new(),
            steps: 0,
        };
        s.enter(scene, &scene.initial.clone(), None);
        s
    }

    pub fn invariants_hold(&self) -> bool {
        !self.nav_stack.is_empty() && self.nav_stack.last() == Some(&self.current)
    }

    /// Buffer text of an input element, falling back to its declared content.
    pub fn buffer<'a>(&'a self, element: &'a Element) -> &'a str {
        match (&element.kind, self.buffers.get(&element.id)) {
            (_, Some(b)) => b,
            (ElementKind::Input { content, .. }, None) => content,
            _ => "",
        }
    }

    fn enter(&mut self, scene: &SceneGraph, screen_id: &str, focus: Option<&str>) {
        self.current = screen_id.to_string();
        self.visited.insert(screen_id.to_string());
        let screen = scene.screen(screen_id).expect("validated scene");
        self.focused = focus.map(str::to_string).or_else(|| {
            screen
                .elements
                .iter()
                .find(|e| matches!(e.kind, ElementKind::Input { focused: true, .. }))
                .map(|e| e.id.clone())
        });
        for e in &screen.elements {
            if let ElementKind::Input { content, .. } = &e.kind {
                self.buffers.entry(e.id.clone()).or_insert_with(|| content.clone());
            }
        }
    }

    fn push(&mut self, scene: &SceneGraph, t: &Transition) {
        self.nav_stack.push(t.to.clone());
        self.enter(scene, &t.to, t.focus.as_deref());
    }
}

/// What a command did to the state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", content = "detail", rename_all = "snake_case")]
pub enum Effect {
    Applied,
    /// Recognized but nothing happened (miss-tap, back at root, ...).
    NoOp,
    /// Not meaningful for the simulator.
    Ignored(String),
}

/// Apply one command. Unchanged states are returned for no-ops.
pub fn sim_execute(scene: &SceneGraph, state: &SimState, cmd: &DeviceCommand) -> (SimState, Effect) {
    let mut next = state.clone();
    let screen = scene.screen(&state.current).expect("state refers to scene");
    let effect = match cmd {
        DeviceCommand::Tap { x, y } => match screen.hit(Point::new(*x, *y)) {
            None => Effect::NoOp,
            Some(el) => {
                if let Some(t) = screen.transition(&Trigger::Tap(el.id.clone())) {
                    next.push(scene, t);
                    Effect::Applied
                } else if matches!(el.kind, ElementKind::Input { .. }) && next.focused.as_deref() != Some(&el.id) {
                    next.focused = Some(el.id.clone());
                    Effect::Applied
                } else {
                    Effect::NoOp
                }
            }
        },
        DeviceCommand::Swipe { y1, y2, .. } => {
            let direction = match y1.cmp(y2) {
                std::cmp::Ordering::Greater => Some(ScrollDirection::Down),
                std::cmp::Ordering::Less => Some(ScrollDirection::Up),
                std::cmp::Ordering::Equal => None,
            };
            match direction.and_then(|d| screen.transition(&Trigger::Scroll(d))) {
                Some(t) => {
                    // scrolling replaces the current page rather than stacking
                    next.nav_stack.pop();
                    next.push(scene, t);
                    Effect::Applied
                }
                None => Effect::NoOp,
            }
        }
        DeviceCommand::KeyEvent { code } if *code == KEYCODE_BACK => {
            if next.nav_stack.len() > 1 {
                next.nav_stack.pop();
                let top = next.nav_stack.last().expect("nonempty").clone();
                next.enter(scene, &top, None);
                Effect::Applied
            } else {
                Effect::NoOp
            }
        }
        DeviceCommand::KeyEvent { code } if *code == KEYCODE_HOME => {
            let fresh_stack = vec![scene.initial.clone()];
            if next.nav_stack == fresh_stack {
                Effect::NoOp
            } else {
                next.nav_stack = fresh_stack;
                next.enter(scene, &scene.initial, None);
                Effect::Applied
            }
        }
        DeviceCommand::KeyEvent { code } => Effect::Ignored(format!("keyevent {code}")),
        DeviceCommand::LaunchApp { identifier } => {
            let names: Vec<&String> =
                scene.app_catalog.iter().filter(|(_, target)| *target == identifier).map(|(n, _)| n).collect();
            let via_trigger = names.iter().find_map(|n| screen.transition(&Trigger::Launch((*n).clone())));
            match (via_trigger, scene.screen(identifier)) {
                (Some(t), _) => {
                    next.nav_stack = vec![scene.initial.clone()];
                    next.push(scene, t);
                    Effect::Applied
                }
                (None, Some(_)) if !names.is_empty() => {
                    next.nav_stack = vec![scene.initial.clone()];
                    if identifier != &scene.initial {
                        next.nav_stack.push(identifier.clone());
                    }
                    next.enter(scene, identifier, None);
                    Effect::Applied
                }
                _ => Effect::Ignored(format!("unknown app {identifier}")),
            }
        }
        DeviceCommand::InputText { text } => {
            let target = next
                .focused
                .clone()
                .filter(|id| matches!(screen.element(id).map(|e| &e.kind), Some(ElementKind::Input { .. })));
            match target {
                Some(id) if !text.is_empty() => {
                    next.buffers.entry(id).or_default().push_str(text);
                    Effect::Applied
                }
                Some(_) => Effect::NoOp,
                None => Effect::Ignored("no focused input".into()),
            }
        }
        DeviceCommand::Capture => Effect::NoOp,
    };
    if effect == Effect::Applied {
        next.steps += 1;
        (next, effect)
    } else {
        (state.clone(), effect)
    }
}

/// Render `state` as a capture with the given sequence number.
pub fn sim_render(scene: &SceneGraph, state: &SimState, sequence: u64) -> ScreenCapture {
    ScreenCapture { image: sim_render_image(scene, state), sequence, captured_at: SystemTime::now() }
}

/// A state predicate used by milestones, e.g. `screen==notes_saved`,
/// `visited:calendar`, `input_contains:Hello`, `focused:body`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatePredicate {
    ScreenIs(String),
    Visited(String),
    InputContains(String),
    Focused(String),
}

impl StatePredicate {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let nonempty = |v: &str, what: &str| {
            if v.trim().is_empty() {
                Err(format!("{what} needs a value"))
            } else {
                Ok(v.trim().to_string())
            }
        };
        if let Some(v) = text.strip_prefix("screen==") {
            Ok(StatePredicate::ScreenIs(nonempty(v, "screen==")?))
        } else if let Some(v) = text.strip_prefix("visited:") {
            Ok(StatePredicate::Visited(nonempty(v, "visited:")?))
        } else if let Some(v) = text.strip_prefix("input_contains:") {
            // the needle is kept verbatim (it may contain spaces)
            if v.is_empty() {
                Err("input_contains: needs a value".into())
            } else {
                Ok(StatePredicate::InputContains(v.to_string()))
            }
        } else if let Some(v) = text.strip_prefix("focused:") {
            Ok(StatePredicate::Focused(nonempty(v, "focused:")?))
        } else {
            Err(format!("unknown predicate {text:?}"))
        }
    }

    /// Screen ids the predicate mentions, for checking against a scene.
    pub fn referenced_screen(&self) -> Option<&str> {
        match self {
            StatePredicate::ScreenIs(s) | StatePredicate::Visited(s) => Some(s),
            _ => None,
        }
    }

    pub fn holds(&self, state: &SimState) -> bool {
        match self {
            StatePredicate::ScreenIs(s) => &state.current == s,
            StatePredicate::Visited(s) => state.visited.contains(s),
            StatePredicate::InputContains(needle) => state.buffers.values().any(|b| b.contains(needle.as_str())),
            StatePredicate::Focused(id) => state.focused.as_deref() == Some(id.as_str()),
        }
    }
}

/// A [`Device`] backed by a scene graph.
pub struct SimDevice {
    scene: Arc<SceneGraph>,
    state: Arc<Mutex<SimState>>,
    sequence: u64,
    log: Vec<(DeviceCommand, Effect)>,
}

impl SimDevice {
    pub fn new(scene: SceneGraph) -> Self {
        let state = SimState::initial(&scene);
        Self { scene: Arc::new(scene), state: Arc::new(Mutex::new(state)), sequence: 0, log: Vec::new() }
    }

    pub fn scene(&self) -> &Arc<SceneGraph> {
        &self.scene
    }

    pub fn state(&self) -> SimState {
        self.state.lock().expect("sim state lock").clone()
    }

    /// Every executed command with its effect.
    pub fn log(&self) -> &[(DeviceCommand, Effect)] {
        &self.log
    }

    /// Oracle perception that follows this device's live state.
    pub fn oracle(&self) -> OracleBackends {
        OracleBackends::live(self.scene.clone(), self.state.clone())
    }
}

impl Device for SimDevice {
    fn capture(&mut self) -> Result<ScreenCapture, DeviceError> {
        self.sequence += 1;
        let state = self.state();
        Ok(sim_render(&self.scene, &state, self.sequence))
    }

    fn execute(&mut self, cmd: &DeviceCommand) -> Result<(), DeviceError> {
        let dims = self.scene.dims;
        let in_bounds = |x: u32, y: u32| dims.contains(Point::new(x, y));
        let valid = match cmd {
            DeviceCommand::Tap { x, y } => in_bounds(*x, *y),
            DeviceCommand::Swipe { x1, y1, x2, y2, duration_ms } => {
                in_bounds(*x1, *y1) && in_bounds(*x2, *y2) && *duration_ms > 0
            }
            _ => true,
        };
        if !valid {
            return Err(DeviceError::InvalidCommand(format!("{cmd:?} outside {dims}")));
        }
        let mut guard = self.state.lock().expect("sim state lock");
        let (next, effect) = sim_execute(&self.scene, &guard, cmd);
        *guard = next;
        self.log.push((cmd.clone(), effect));
        Ok(())
    }

    fn dimensions(&self) -> Dims {
        self.scene.dims
    }

    fn app_catalog(&self) -> Vec<(String, String)> {
        self.scene.app_catalog.iter().map(|(n, s)| (n.clone(), s.clone())).collect()
    }

    fn settle(&mut self, _delay: Duration) {}

    fn describe(&self) -> DeviceInfo {
        DeviceInfo { kind: "sim".into(), name: Some(self.scene.name.clone()), scene_digest: Some(self.scene.digest()) }
    }
}
