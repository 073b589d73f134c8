//! The eight-operation action vocabulary and the Observation/Thought/Action
//! turn grammar.
//!
//! Canonical surface forms:
//!
//! | Action | Rendered |
//! |---|---|
//! | `OpenApp` | `Open App (Notes)` |
//! | `ClickText` | `Click the text (Save)` |
//! | `ClickIcon` | `Click the icon (blue round icon, top, right)` |
//! | `TypeText` | `Type (hello)` |
//! | `Scroll` | `Page up` / `Page down` |
//! | `Back`, `Exit`, `Stop` | verbatim |
//!
//! Parsing is tolerant: section headers are matched case-insensitively, only
//! the first non-empty line of the Action section is read, and trailing
//! punctuation after the action is dropped.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A screen region qualifier for icon clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Top,
    Bottom,
    Left,
    Right,
    Center,
}

impl Position {
    pub const ALL: [Position; 5] = [
        Position::Top,
        Position::Bottom,
        Position::Left,
        Position::Right,
        Position::Center,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Top => "top",
            Position::Bottom => "bottom",
            Position::Left => "left",
            Position::Right => "right",
            Position::Center => "center",
        }
    }

    /// Case-insensitive; accepts the British spelling of center.
    pub fn parse(word: &str) -> Option<Position> {
        match word.trim().to_lowercase().as_str() {
            "top" => Some(Position::Top),
            "bottom" => Some(Position::Bottom),
            "left" => Some(Position::Left),
            "right" => Some(Position::Right),
            "center" | "centre" | "middle" => Some(Position::Center),
            _ => None,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

/// One agent operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    OpenApp { app: String },
    ClickText { text: String },
    ClickIcon { description: String, positions: Vec<Position> },
    TypeText { content: String },
    Scroll { direction: ScrollDirection },
    Back,
    Exit,
    Stop,
}

impl Action {
    /// Operation name as it appears in prompts (the parameter-free part).
    pub fn op_name(&self) -> Operation {
        match self {
            Action::OpenApp { .. } => Operation::OpenApp,
            Action::ClickText { .. } => Operation::ClickText,
            Action::ClickIcon { .. } => Operation::ClickIcon,
            Action::TypeText { .. } => Operation::TypeText,
            Action::Scroll { .. } => Operation::Scroll,
            Action::Back => Operation::Back,
            Action::Exit => Operation::Exit,
            Action::Stop => Operation::Stop,
        }
    }

    pub fn needs_grounding(&self) -> bool {
        matches!(self, Action::ClickText { .. } | Action::ClickIcon { .. })
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

/// The operation kinds, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    OpenApp,
    ClickText,
    ClickIcon,
    TypeText,
    Scroll,
    Back,
    Exit,
    Stop,
}

impl Operation {
    pub const ALL: [Operation; 8] = [
        Operation::OpenApp,
        Operation::ClickText,
        Operation::ClickIcon,
        Operation::TypeText,
        Operation::Scroll,
        Operation::Back,
        Operation::Exit,
        Operation::Stop,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            Operation::OpenApp => "Open App",
            Operation::ClickText => "Click the text",
            Operation::ClickIcon => "Click the icon",
            Operation::TypeText => "Type",
            Operation::Scroll => "Page up & down",
            Operation::Back => "Back",
            Operation::Exit => "Exit",
            Operation::Stop => "Stop",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

/// A parsed agent response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub observation: String,
    pub thought: String,
    pub action: Action,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Section {
    Observation,
    Thought,
    Action,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Observation => "Observation",
            Section::Thought => "Thought",
            Section::Action => "Action",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("missing {0} section")]
    MissingSection(Section),
    #[error("unknown operation: {0:?}")]
    UnknownOperation(String),
    #[error("{op} takes a different number of arguments (got {got})")]
    BadArity { op: Operation, got: usize },
    #[error("not a position: {0:?}")]
    BadPosition(String),
}

/// A broken action invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum Violation {
    /// A text parameter that must be nonempty is blank.
    #[error("target text is empty")]
    EmptyTarget,
    #[error("no position given")]
    PositionsEmpty,
    #[error("more than two positions")]
    PositionsTooMany,
    #[error("a position is repeated")]
    DuplicatePosition,
}

/// Canonical text form of `action`.
pub fn render_action(action: &Action) -> String {
    match action {
        Action::OpenApp { app } => format!("Open App ({app})"),
        Action::ClickText { text } => format!("Click the text ({text})"),
        Action::ClickIcon { description, positions } => {
            let mut out = format!("Click the icon ({description}");
            for p in positions {
                out.push_str(", ");
                out.push_str(p.as_str());
            }
            out.push(')');
            out
        }
        Action::TypeText { content } => format!("Type ({content})"),
        Action::Scroll { direction: ScrollDirection::Up } => "Page up".to_string(),
        Action::Scroll { direction: ScrollDirection::Down } => "Page down".to_string(),
        Action::Back => "Back".to_string(),
        Action::Exit => "Exit".to_string(),
        Action::Stop => "Stop".to_string(),
    }
}

/// All invariant violations of `action`; empty when valid.
pub fn validate_action(action: &Action) -> Vec<Violation> {
    let mut out = Vec::new();
    match action {
        Action::OpenApp { app: text } | Action::ClickText { text } => {
            if text.trim().is_empty() {
                out.push(Violation::EmptyTarget);
            }
        }
        Action::ClickIcon { description, positions } => {
            if description.trim().is_empty() {
                out.push(Violation::EmptyTarget);
            }
            if positions.is_empty() {
                out.push(Violation::PositionsEmpty);
            }
            if positions.len() > 2 {
                out.push(Violation::PositionsTooMany);
            }
            let mut seen = Vec::with_capacity(positions.len());
            for p in positions {
                if seen.contains(p) {
                    out.push(Violation::DuplicatePosition);
                    break;
                }
                seen.push(*p);
            }
        }
        Action::TypeText { .. }
        | Action::Scroll { .. }
        | Action::Back
        | Action::Exit
        | Action::Stop => {}
    }
    out
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t>#*_\-]*(observation|thought|action)[ \t*_]*:[*_]*").expect("header regex")
    })
}

/// Parse a raw agent response into its three sections.
pub fn parse_agent_turn(raw: &str) -> Result<AgentTurn, ParseError> {
    // (section, header start, body start)
    let mut headers: Vec<(Section, usize, usize)> = Vec::new();
    for caps in header_regex().captures_iter(raw) {
        let whole = caps.get(0).expect("match");
        let section = match caps[1].to_lowercase().as_str() {
            "observation" => Section::Observation,
            "thought" => Section::Thought,
            _ => Section::Action,
        };
        headers.push((section, whole.start(), whole.end()));
    }

    let order = [Section::Observation, Section::Thought, Section::Action];
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(3);
    let mut cursor = 0usize;
    for section in order {
        let found = headers
            .iter()
            .find(|(s, start, _)| *s == section && *start >= cursor)
            .ok_or(ParseError::MissingSection(section))?;
        picked.push((found.1, found.2));
        cursor = found.2;
    }

    let body = |i: usize| -> &str {
        let start = picked[i].1;
        let end = picked.get(i + 1).map(|p| p.0).unwrap_or(raw.len());
        raw[start..end].trim()
    };
    let observation = body(0).to_string();
    let thought = body(1).to_string();
    let action_line = body(2)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let action = parse_action(action_line)?;

    Ok(AgentTurn { observation, thought, action, raw: raw.to_string() })
}

/// Parse a single action line such as `Click the text (Save)`.
pub fn parse_action(line: &str) -> Result<Action, ParseError> {
    let line = strip_decoration(line);
    let (verb, args) = match line.find('(') {
        Some(open) => {
            let close = line.rfind(')').filter(|&c| c > open);
            let inner = match close {
                Some(c) => &line[open + 1..c],
                None => &line[open + 1..],
            };
            (&line[..open], Some(inner.trim()))
        }
        None => (line, None),
    };
    let verb = normalize_verb(verb);

    let op = match verb.as_str() {
        "open app" | "open the app" | "open" => Operation::OpenApp,
        "click the text" | "click text" | "tap the text" => Operation::ClickText,
        "click the icon" | "click icon" | "tap the icon" => Operation::ClickIcon,
        "type" | "type text" => Operation::TypeText,
        "page up" | "scroll up" => {
            no_args(Operation::Scroll, args)?;
            return Ok(Action::Scroll { direction: ScrollDirection::Up });
        }
        "page down" | "scroll down" => {
            no_args(Operation::Scroll, args)?;
            return Ok(Action::Scroll { direction: ScrollDirection::Down });
        }
        "back" => {
            no_args(Operation::Back, args)?;
            return Ok(Action::Back);
        }
        "exit" => {
            no_args(Operation::Exit, args)?;
            return Ok(Action::Exit);
        }
        "stop" => {
            no_args(Operation::Stop, args)?;
            return Ok(Action::Stop);
        }
        _ => return Err(ParseError::UnknownOperation(line.to_string())),
    };

    match op {
        Operation::TypeText => Ok(Action::TypeText { content: args.unwrap_or("").to_string() }),
        Operation::OpenApp | Operation::ClickText => {
            let arg = args.filter(|a| !a.is_empty()).ok_or(ParseError::BadArity { op, got: 0 })?;
            Ok(if op == Operation::OpenApp {
                Action::OpenApp { app: arg.to_string() }
            } else {
                Action::ClickText { text: arg.to_string() }
            })
        }
        Operation::ClickIcon => {
            let arg = args.filter(|a| !a.is_empty()).ok_or(ParseError::BadArity { op, got: 0 })?;
            parse_icon_args(arg)
        }
        _ => unreachable!("parameterless operations returned above"),
    }
}

fn no_args(op: Operation, args: Option<&str>) -> Result<(), ParseError> {
    match args {
        Some(a) if !a.is_empty() => Err(ParseError::BadArity { op, got: a.split(',').count() }),
        _ => Ok(()),
    }
}

/// Drop markdown decoration and trailing punctuation around an action line.
fn strip_decoration(line: &str) -> &str {
    line.trim_start_matches(|c: char| c.is_whitespace() || "`*\"'".contains(c))
        .trim_end_matches(|c: char| c.is_whitespace() || "`*\"'.;!,。".contains(c))
}

fn normalize_verb(verb: &str) -> String {
    verb.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .trim_end_matches(':')
        .to_string()
}

/// Positions spelled inside one comma token, e.g. `top right` or `top-left`.
fn token_positions(token: &str) -> Option<Vec<Position>> {
    let words: Vec<&str> = token
        .split(|c: char| c.is_whitespace() || c == '-' || c == '&')
        .filter(|w| !w.is_empty() && !w.eq_ignore_ascii_case("and"))
        .collect();
    if words.is_empty() {
        return None;
    }
    words.iter().map(|w| Position::parse(w)).collect()
}

fn parse_icon_args(arg: &str) -> Result<Action, ParseError> {
    let tokens: Vec<&str> = arg.split(',').collect();
    if tokens.len() < 2 {
        return Err(ParseError::BadArity { op: Operation::ClickIcon, got: 1 });
    }
    let mut positions: Vec<Position> = Vec::new();
    let mut desc_end = tokens.len();
    // Trailing tokens that spell positions, at most two positions in total,
    // always leaving at least one token for the description.
    while desc_end > 1 && positions.len() < 2 {
        let Some(found) = token_positions(tokens[desc_end - 1]) else { break };
        if positions.len() + found.len() > 2 {
            if positions.is_empty() {
                return Err(ParseError::BadPosition(tokens[desc_end - 1].trim().to_string()));
            }
            break;
        }
        let mut found = found;
        found.extend(positions);
        positions = found;
        desc_end -= 1;
    }
    if positions.is_empty() {
        return Err(ParseError::BadPosition(tokens[tokens.len() - 1].trim().to_string()));
    }
    let description = tokens[..desc_end].join(",").trim().to_string();
    if description.is_empty() {
        return Err(ParseError::BadArity { op: Operation::ClickIcon, got: tokens.len() - desc_end });
    }
    Ok(Action::ClickIcon { description, positions })
}
