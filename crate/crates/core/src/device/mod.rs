//! Device abstraction: screenshot capture, command execution and the
//! action-to-command translation table.

pub mod adb;
mod change;

use std::time::{Duration, SystemTime};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ScrollDirection};
use crate::perception::{normalize_text, Dims, GroundingOutcome};

pub use change::{screen_changed, ChangeReport, DEFAULT_CHANGE_TOLERANCE, DIFF_GRID, PIXEL_DELTA};

pub const KEYCODE_HOME: u32 = 3;
pub const KEYCODE_BACK: u32 = 4;

/// Duration of the page-scroll swipe.
pub const SWIPE_MS: u32 = 500;

#[derive(Debug, Clone)]
pub struct ScreenCapture {
    pub image: RgbImage,
    /// Strictly increasing within a session.
    pub sequence: u64,
    pub captured_at: SystemTime,
}

impl ScreenCapture {
    pub fn dims(&self) -> Dims {
        Dims::new(self.image.width(), self.image.height())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum DeviceCommand {
    Tap { x: u32, y: u32 },
    Swipe { x1: u32, y1: u32, x2: u32, y2: u32, duration_ms: u32 },
    InputText { text: String },
    KeyEvent { code: u32 },
    LaunchApp { identifier: String },
    Capture,
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device disconnected: {0}")]
    DeviceDisconnected(String),
    #[error("command failed: {0}")]
    CommandFailed(String),
    #[error("could not decode screenshot: {0}")]
    CaptureDecodeError(String),
    #[error("command not valid here: {0}")]
    InvalidCommand(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identity recorded in trace headers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_digest: Option<String>,
}

/// A controllable screen. Commands run strictly one at a time.
pub trait Device: Send {
    fn capture(&mut self) -> Result<ScreenCapture, DeviceError>;
    fn execute(&mut self, cmd: &DeviceCommand) -> Result<(), DeviceError>;
    fn dimensions(&self) -> Dims;
    /// `(display name, launch identifier)` pairs.
    fn app_catalog(&self) -> Vec<(String, String)>;
    /// Wait for the screen to settle after a command.
    fn settle(&mut self, delay: Duration) {
        std::thread::sleep(delay);
    }
    fn describe(&self) -> DeviceInfo {
        DeviceInfo { kind: "device".into(), ..DeviceInfo::default() }
    }
}

impl<D: Device + ?Sized> Device for Box<D> {
    fn capture(&mut self) -> Result<ScreenCapture, DeviceError> {
        (**self).capture()
    }
    fn execute(&mut self, cmd: &DeviceCommand) -> Result<(), DeviceError> {
        (**self).execute(cmd)
    }
    fn dimensions(&self) -> Dims {
        (**self).dimensions()
    }
    fn app_catalog(&self) -> Vec<(String, String)> {
        (**self).app_catalog()
    }
    fn settle(&mut self, delay: Duration) {
        (**self).settle(delay)
    }
    fn describe(&self) -> DeviceInfo {
        (**self).describe()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TranslationError {
    #[error("action needs a resolved grounding")]
    UnresolvedGrounding,
    #[error("grounding given for an action that does not use one")]
    UnexpectedGrounding,
    #[error("unknown app: {0}")]
    UnknownApp(String),
    #[error("point ({x}, {y}) is outside the screen")]
    OutOfBounds { x: u32, y: u32 },
}

/// Resolve an app display name case-insensitively.
pub fn resolve_app<'a>(catalog: &'a [(String, String)], name: &str) -> Option<&'a str> {
    let wanted = normalize_text(name);
    catalog
        .iter()
        .find(|(display, _)| normalize_text(display) == wanted)
        .map(|(_, id)| id.as_str())
}

/// Vertical page swipe through the middle 40% of the screen.
pub fn scroll_swipe(direction: ScrollDirection, dims: Dims) -> DeviceCommand {
    let x = dims.width / 2;
    let low = (dims.height as u64 * 7 / 10) as u32;
    let high = (dims.height as u64 * 3 / 10) as u32;
    let (y1, y2) = match direction {
        ScrollDirection::Down => (low, high),
        ScrollDirection::Up => (high, low),
    };
    DeviceCommand::Swipe { x1: x, y1, x2: x, y2, duration_ms: SWIPE_MS }
}

/// Device commands that realize `action`.
pub fn translate(
    action: &Action,
    grounding: Option<&GroundingOutcome>,
    dims: Dims,
    catalog: &[(String, String)],
) -> Result<Vec<DeviceCommand>, TranslationError> {
    if action.needs_grounding() {
        let point = grounding
            .and_then(GroundingOutcome::point)
            .ok_or(TranslationError::UnresolvedGrounding)?;
        if !dims.contains(point) {
            return Err(TranslationError::OutOfBounds { x: point.x, y: point.y });
        }
        return Ok(vec![DeviceCommand::Tap { x: point.x, y: point.y }]);
    }
    if grounding.is_some() {
        return Err(TranslationError::UnexpectedGrounding);
    }
    Ok(match action {
        Action::OpenApp { app } => {
            let id = resolve_app(catalog, app).ok_or_else(|| TranslationError::UnknownApp(app.clone()))?;
            vec![DeviceCommand::LaunchApp { identifier: id.to_string() }]
        }
        Action::TypeText { content } => vec![DeviceCommand::InputText { text: content.clone() }],
        Action::Scroll { direction } => vec![scroll_swipe(*direction, dims)],
        Action::Back => vec![DeviceCommand::KeyEvent { code: KEYCODE_BACK }],
        Action::Exit => vec![DeviceCommand::KeyEvent { code: KEYCODE_HOME }],
        Action::Stop => vec![],
        Action::ClickText { .. } | Action::ClickIcon { .. } => unreachable!("handled above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Position;
    use crate::perception::Point;

    fn dims() -> Dims {
        Dims::new(1080, 1920)
    }

    fn catalog() -> Vec<(String, String)> {
        vec![("Notes".into(), "com.example.notes".into())]
    }

    #[test]
    fn click_passes_point_through() {
        let g = GroundingOutcome::Resolved { point: Point::new(200, 230) };
        let a = Action::ClickText { text: "Save".into() };
        assert_eq!(translate(&a, Some(&g), dims(), &[]).unwrap(), vec![DeviceCommand::Tap { x: 200, y: 230 }]);
        let icon = Action::ClickIcon { description: "x".into(), positions: vec![Position::Top] };
        assert_eq!(translate(&icon, Some(&g), dims(), &[]).unwrap().len(), 1);
    }

    #[test]
    fn click_without_resolution_fails() {
        let a = Action::ClickText { text: "Save".into() };
        assert_eq!(translate(&a, None, dims(), &[]), Err(TranslationError::UnresolvedGrounding));
        assert_eq!(
            translate(&a, Some(&GroundingOutcome::NotFound), dims(), &[]),
            Err(TranslationError::UnresolvedGrounding)
        );
        let off = GroundingOutcome::Resolved { point: Point::new(1080, 5) };
        assert_eq!(translate(&a, Some(&off), dims(), &[]), Err(TranslationError::OutOfBounds { x: 1080, y: 5 }));
    }

    #[test]
    fn keys_and_stop() {
        assert_eq!(translate(&Action::Exit, None, dims(), &[]).unwrap(), vec![DeviceCommand::KeyEvent { code: 3 }]);
        assert_eq!(translate(&Action::Back, None, dims(), &[]).unwrap(), vec![DeviceCommand::KeyEvent { code: 4 }]);
        assert!(translate(&Action::Stop, None, dims(), &[]).unwrap().is_empty());
    }

    #[test]
    fn open_app_uses_catalog() {
        let a = Action::OpenApp { app: "  notes ".into() };
        assert_eq!(
            translate(&a, None, dims(), &catalog()).unwrap(),
            vec![DeviceCommand::LaunchApp { identifier: "com.example.notes".into() }]
        );
        let b = Action::OpenApp { app: "Maps".into() };
        assert_eq!(translate(&b, None, dims(), &catalog()), Err(TranslationError::UnknownApp("Maps".into())));
    }

    #[test]
    fn scroll_swipes_mirror() {
        let down = translate(&Action::Scroll { direction: ScrollDirection::Down }, None, dims(), &[]).unwrap();
        let up = translate(&Action::Scroll { direction: ScrollDirection::Up }, None, dims(), &[]).unwrap();
        assert_eq!(down, vec![DeviceCommand::Swipe { x1: 540, y1: 1344, x2: 540, y2: 576, duration_ms: 500 }]);
        match (&down[0], &up[0]) {
            (
                DeviceCommand::Swipe { x1: a, y1: b, x2: c, y2: d, .. },
                DeviceCommand::Swipe { x1: e, y1: f, x2: g, y2: h, .. },
            ) => {
                assert_eq!((a, c), (e, g));
                assert_eq!((b, d), (h, f));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn grounding_on_plain_action_is_rejected() {
        let g = GroundingOutcome::NotFound;
        assert_eq!(translate(&Action::Back, Some(&g), dims(), &[]), Err(TranslationError::UnexpectedGrounding));
    }
}
