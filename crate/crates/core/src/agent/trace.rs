//! Session traces: per-step records and their JSONL form.
//!
//! A trace directory holds `trace.jsonl` (a header line, then one
//! [`StepRecord`] per line) and every distinct capture as `<pixel-hash>.png`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::{Action, AgentTurn};
use crate::codec::encode_png;
use crate::device::{ChangeReport, DeviceCommand, DeviceInfo};
use crate::perception::GroundingOutcome;

use super::SessionConfig;

pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    StuckRecovery,
    CompletionCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Executed,
    /// Parsed, but validation, grounding or translation refused it.
    Invalid,
    ParseFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Complete,
    Continue(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Complete => f.write_str("complete"),
            Verdict::Continue(r) if r.is_empty() => f.write_str("continue"),
            Verdict::Continue(r) => write!(f, "continue: {r}"),
        }
    }
}

/// The model's answer for a planning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub raw: String,
    pub parsed: Option<AgentTurn>,
    /// Replies that failed to parse before this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based position in the trace.
    pub index: usize,
    pub phase: Phase,
    pub status: StepStatus,
    pub capture_seq: u64,
    pub capture_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingOutcome>,
    /// 1-based candidate picked for an ambiguous text target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<usize>,
    #[serde(default)]
    pub commands: Vec<DeviceCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change: Option<ChangeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl StepRecord {
    pub fn new(index: usize, phase: Phase, capture_seq: u64, capture_hash: String) -> Self {
        Self {
            index,
            phase,
            status: StepStatus::Executed,
            capture_seq,
            capture_hash,
            reflection: None,
            turn: None,
            verdict: None,
            grounding: None,
            selection: None,
            commands: Vec::new(),
            after_seq: None,
            after_hash: None,
            change: None,
            note: None,
            elapsed_ms: 0,
        }
    }

    pub fn action(&self) -> Option<&Action> {
        self.turn.as_ref()?.parsed.as_ref().map(|t| &t.action)
    }

    pub fn is_planning(&self) -> bool {
        matches!(self.phase, Phase::Planning | Phase::StuckRecovery)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TerminalStatus {
    Stopped,
    Exhausted,
    Aborted(String),
}

impl TerminalStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TerminalStatus::Stopped => "stopped",
            TerminalStatus::Exhausted => "exhausted",
            TerminalStatus::Aborted(_) => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub instruction: String,
    pub config: SessionConfig,
    pub device: DeviceInfo,
    pub terminal: Option<TerminalStatus>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    #[serde(default)]
    pub steps: Vec<StepRecord>,
    /// Captures keyed by pixel hash. Written as PNG files beside the JSONL.
    #[serde(skip)]
    pub captures: BTreeMap<String, RgbImage>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "type")]
    kind: String,
    instruction: String,
    config: SessionConfig,
    device: DeviceInfo,
    terminal: Option<TerminalStatus>,
    started_at_ms: u64,
    finished_at_ms: u64,
    steps: usize,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace file is empty")]
    Empty,
    #[error("header says {expected} steps, found {found}")]
    StepCount { expected: usize, found: usize },
}

const TIMING_KEYS: [&str; 3] = ["started_at_ms", "finished_at_ms", "elapsed_ms"];

impl Trace {
    pub fn new(instruction: impl Into<String>, config: SessionConfig, device: DeviceInfo) -> Self {
        Self {
            instruction: instruction.into(),
            config,
            device,
            terminal: None,
            started_at_ms: 0,
            finished_at_ms: 0,
            steps: Vec::new(),
            captures: BTreeMap::new(),
        }
    }

    pub fn planning_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.is_planning())
    }

    /// Each line of the JSONL form. With `strip_timings` wall-clock fields
    /// are removed, so replays of the same session compare equal.
    pub fn jsonl_lines(&self, strip_timings: bool) -> Vec<String> {
        let header = Header {
            kind: "header".into(),
            instruction: self.instruction.clone(),
            config: self.config.clone(),
            device: self.device.clone(),
            terminal: self.terminal.clone(),
            started_at_ms: self.started_at_ms,
            finished_at_ms: self.finished_at_ms,
            steps: self.steps.len(),
        };
        let mut values = vec![serde_json::to_value(&header).expect("header serializes")];
        values.extend(self.steps.iter().map(|s| serde_json::to_value(s).expect("step serializes")));
        values
            .into_iter()
            .map(|mut v| {
                if strip_timings {
                    if let Value::Object(map) = &mut v {
                        for key in TIMING_KEYS {
                            map.remove(key);
                        }
                    }
                }
                v.to_string()
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.jsonl_lines(false).join("\n");
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: Header = serde_json::from_str(first).map_err(|source| TraceError::Json { line: 1, source })?;
        let steps = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|source| TraceError::Json { line: i + 1, source }))
            .collect::<Result<Vec<StepRecord>, _>>()?;
        if steps.len() != header.steps {
            return Err(TraceError::StepCount { expected: header.steps, found: steps.len() });
        }
        Ok(Self {
            instruction: header.instruction,
            config: header.config,
            device: header.device,
            terminal: header.terminal,
            started_at_ms: header.started_at_ms,
            finished_at_ms: header.finished_at_ms,
            steps,
            captures: BTreeMap::new(),
        })
    }

    /// Write `trace.jsonl` and the capture PNGs into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), TraceError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(TRACE_FILE))?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        for (hash, img) in &self.captures {
            let path = dir.join(format!("{hash}.png"));
            if !path.exists() {
                std::fs::write(path, encode_png(img))?;
            }
        }
        Ok(())
    }

    /// Read `trace.jsonl` from a directory (or the file itself). Captures are not loaded.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(TRACE_FILE) } else { path.to_path_buf() };
        let mut text = String::new();
        for line in BufReader::new(std::fs::File::open(file)?).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }

    /// Structural checks every finished trace satisfies.
    pub fn check_invariants(&self) -> Result<(), String> {
        let planning = self.planning_steps().count();
        if planning > self.config.max_iterations {
            return Err(format!("{planning} planning steps exceed max_iterations {}", self.config.max_iterations));
        }
        let checks = self.steps.iter().filter(|s| s.phase == Phase::CompletionCheck).count();
        if checks > self.config.completion_check_rounds {
            return Err(format!("{checks} completion checks exceed {}", self.config.completion_check_rounds));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.index != i {
                return Err(format!("step {i} has index {}", s.index));
            }
            if i > 0 && s.capture_seq <= self.steps[i - 1].capture_seq {
                return Err(format!("capture sequence does not increase at step {i}"));
            }
            if s.status != StepStatus::Executed && !s.commands.is_empty() {
                return Err(format!("step {i} is {:?} but has commands", s.status));
            }
        }
        if self.terminal == Some(TerminalStatus::Stopped) {
            let last_plan = self.planning_steps().last().and_then(StepRecord::action);
            if !matches!(last_plan, Some(Action::Stop)) {
                return Err("stopped trace does not end with Stop".into());
            }
            if self.config.completion_check_rounds > 0 {
                let last = self.steps.last().ok_or("stopped trace has no steps")?;
                if last.verdict != Some(Verdict::Complete) {
                    return Err("stopped trace lacks a Complete verdict".into());
                }
            }
        }
        Ok(())
    }
}
