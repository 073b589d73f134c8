//! Benchmark scoring: task files, milestone-based step labels, per-trace
//! metrics (success, process score, relative efficiency, completion rate)
//! and their aggregation.
//!
//! Metric arithmetic is generic over [`Score`], so the same code produces
//! `f64` reports and exact rational ones.

mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::agent::{StepStatus, TerminalStatus, Trace, Verdict};
use crate::codec::pixel_hash;
use crate::score::Score;
use crate::simulator::{sim_execute, sim_render_image, SceneError, SceneGraph, SimState, StatePredicate};

pub use report::{
    aggregate, export_report, load_report, render_table, BenchReport, DifficultyAverage, ReportEntry,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub desc: String,
    pub predicate: String,
    /// Predicates on the way to this milestone whose satisfaction also counts as a correct step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intermediates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub app: String,
    pub instruction: String,
    pub difficulty: u8,
    pub human_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<Milestone>>,
    /// Scripted model replies for offline runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.app.trim().is_empty() {
            return Err("app is empty".into());
        }
        if self.instruction.trim().is_empty() {
            return Err("instruction is empty".into());
        }
        if !(1..=3).contains(&self.difficulty) {
            return Err(format!("difficulty {} not in 1..=3", self.difficulty));
        }
        if self.human_steps == 0 {
            return Err("human_steps must be at least 1".into());
        }
        if let Some(ms) = &self.milestones {
            if ms.is_empty() {
                return Err("milestones, when present, must be nonempty".into());
            }
            if self.scene.is_none() {
                return Err("milestones need a scene".into());
            }
            for m in ms {
                for p in std::iter::once(&m.predicate).chain(&m.intermediates) {
                    StatePredicate::parse(p).map_err(|e| format!("milestone {:?}: {e}", m.desc))?;
                }
            }
        }
        Ok(())
    }

    /// Parsed milestone predicates with their intermediates.
    pub fn predicates(&self) -> Result<Vec<(StatePredicate, Vec<StatePredicate>)>, EvalError> {
        let ms = self.milestones.as_ref().ok_or(EvalError::MissingMilestones)?;
        ms.iter()
            .map(|m| {
                let main = StatePredicate::parse(&m.predicate).map_err(EvalError::Invalid)?;
                let inter = m
                    .intermediates
                    .iter()
                    .map(|p| StatePredicate::parse(p).map_err(EvalError::Invalid))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((main, inter))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: at `{field}` (line {line}, column {column}): {message}")]
    Schema { file: String, field: String, line: usize, column: usize, message: String },
    #[error("task {index}: {message}")]
    InvalidTask { index: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("trace does not belong to this scene: {0}")]
    SceneMismatch(String),
    #[error("task has no milestones")]
    MissingMilestones,
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("report violates {0}")]
    ReportInvariant(String),
}

/// Deserialize JSON with the failing field path and position in the error.
pub(crate) fn from_json_diagnosed<T: serde::de::DeserializeOwned>(text: &str, file: &str) -> Result<T, EvalError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        EvalError::Schema {
            file: file.to_string(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

/// Parse and validate a task file. Relative `scene` and `script` paths are
/// resolved against `base`.
pub fn parse_tasks(text: &str, file: &str, base: Option<&Path>) -> Result<Vec<TaskSpec>, EvalError> {
    let parsed: TaskFile = from_json_diagnosed(text, file)?;
    let mut tasks = parsed.tasks;
    for (index, t) in tasks.iter_mut().enumerate() {
        t.validate().map_err(|message| EvalError::InvalidTask { index, message })?;
        if let Some(base) = base {
            for p in [&mut t.scene, &mut t.script].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
    Ok(tasks)
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<TaskSpec>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    parse_tasks(&text, &path.display().to_string(), path.parent())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabel {
    /// Index of the labeled step in the trace.
    pub step: usize,
    pub correct: bool,
    /// Milestones reached after this step.
    pub milestone_reached: usize,
}

/// Steps counted for process score and relative efficiency: executed
/// planning steps other than Stop.
pub fn counted_steps(trace: &Trace) -> impl Iterator<Item = &crate::agent::StepRecord> {
    trace
        .planning_steps()
        .filter(|s| s.status == StepStatus::Executed && !matches!(s.action(), Some(Action::Stop) | None))
}

pub fn agent_steps(trace: &Trace) -> u32 {
    counted_steps(trace).count() as u32
}

fn advance(milestones: &[(StatePredicate, Vec<StatePredicate>)], mut reached: usize, state: &SimState) -> usize {
    while reached < milestones.len() && milestones[reached].0.holds(state) {
        reached += 1;
    }
    reached
}

/// Label each counted step by replaying its commands on the scene.
///
/// A step is correct when it raises the milestone count, or when it newly
/// satisfies a declared intermediate of the next milestone. Captures recorded
/// in the trace must match the replayed renderings.
pub fn label_steps(trace: &Trace, task: &TaskSpec, scene: &SceneGraph) -> Result<Vec<StepLabel>, EvalError> {
    let milestones = task.predicates()?;
    match (&trace.device.kind[..], &trace.device.scene_digest) {
        ("sim", Some(d)) if *d == scene.digest() => {}
        ("sim", Some(_)) => return Err(EvalError::SceneMismatch("scene digest differs".into())),
        (kind, _) => return Err(EvalError::SceneMismatch(format!("trace was recorded on a {kind:?} device"))),
    }
    for (pred, inter) in &milestones {
        for p in std::iter::once(pred).chain(inter) {
            if let Some(id) = p.referenced_screen() {
                if scene.screen(id).is_none() {
                    return Err(EvalError::SceneMismatch(format!("milestone names missing screen {id:?}")));
                }
            }
        }
    }

    let mut state = SimState::initial(scene);
    let mut reached = advance(&milestones, 0, &state);
    let mut labels = Vec::new();
    for step in counted_steps(trace) {
        if pixel_hash(&sim_render_image(scene, &state)) != step.capture_hash {
            return Err(EvalError::SceneMismatch(format!("capture of step {} differs from the replay", step.index)));
        }
        let before = state.clone();
        for cmd in &step.commands {
            state = sim_execute(scene, &state, cmd).0;
        }
        if let Some(after) = &step.after_hash {
            if pixel_hash(&sim_render_image(scene, &state)) != *after {
                return Err(EvalError::SceneMismatch(format!("step {} leads to a different screen", step.index)));
            }
        }
        let now = advance(&milestones, reached, &state);
        let intermediate = milestones
            .get(reached)
            .is_some_and(|(_, inter)| inter.iter().any(|p| p.holds(&state) && !p.holds(&before)));
        labels.push(StepLabel { step: step.index, correct: now > reached || intermediate, milestone_reached: now });
        reached = now;
    }
    Ok(labels)
}

/// Milestones reached after the whole trace (or from the initial state when no steps were labeled).
pub fn milestones_reached(labels: &[StepLabel], task: &TaskSpec, scene: &SceneGraph) -> Result<usize, EvalError> {
    match labels.last() {
        Some(l) => Ok(l.milestone_reached),
        None => Ok(advance(&task.predicates()?, 0, &SimState::initial(scene))),
    }
}

/// 1 when every milestone is reached and the agent stopped by itself.
pub fn success(trace: &Trace, reached: usize, milestone_count: usize) -> u8 {
    u8::from(reached == milestone_count && trace.terminal == Some(TerminalStatus::Stopped))
}

/// Correct over total, `None` for an empty label list.
pub fn process_score<S: Score>(labels: &[StepLabel]) -> Option<S> {
    if labels.is_empty() {
        return None;
    }
    Some(S::ratio(labels.iter().filter(|l| l.correct).count(), labels.len()))
}

/// Completed over total human steps, capped at 1.
pub fn completion_rate<S: Score>(completed: usize, human_steps: u32) -> S {
    assert!(human_steps > 0, "human_steps must be positive");
    S::ratio(completed.min(human_steps as usize), human_steps as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No labeled steps; PS reported as 0.
    PsUndefined,
    /// PS and CR need manual labels (live trace).
    NeedsManualLabels,
    /// Success taken from the agent's own confirmed Stop.
    SelfReportedSuccess,
    /// Values come from imported human labels.
    HumanLabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport<S> {
    pub su: u8,
    pub ps: Option<S>,
    pub agent_steps: u32,
    pub human_steps: u32,
    pub cr: Option<S>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
}

impl<S: Score> TaskReport<S> {
    /// Build a report, forcing CR to 1 on success.
    pub fn new(su: bool, ps: Option<S>, agent_steps: u32, human_steps: u32, cr: Option<S>) -> Self {
        let cr = if su { Some(S::one()) } else { cr };
        Self { su: u8::from(su), ps, agent_steps, human_steps, cr, flags: Vec::new() }
    }

    pub fn with_flag(mut self, flag: Flag) -> Self {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
            self.flags.sort();
        }
        self
    }

    pub fn check(&self) -> Result<(), EvalError> {
        let unit = |v: &Option<S>| v.is_none_or(|x| x >= S::zero() && x <= S::one());
        if self.su > 1 {
            return Err(EvalError::ReportInvariant("su in {0, 1}".into()));
        }
        if !unit(&self.ps) || !unit(&self.cr) {
            return Err(EvalError::ReportInvariant("0 <= ps, cr <= 1".into()));
        }
        if self.su == 1 && self.cr.is_some_and(|c| c != S::one()) {
            return Err(EvalError::ReportInvariant("su = 1 implies cr = 1".into()));
        }
        if self.human_steps == 0 {
            return Err(EvalError::ReportInvariant("human_steps >= 1".into()));
        }
        Ok(())
    }

    /// Relative efficiency as `agent / human` steps.
    pub fn relative_efficiency(&self) -> S {
        S::ratio(self.agent_steps as usize, self.human_steps as usize)
    }
}

/// Score a simulator trace against its task.
pub fn score_sim_trace<S: Score>(trace: &Trace, task: &TaskSpec, scene: &SceneGraph) -> Result<TaskReport<S>, EvalError> {
    let labels = label_steps(trace, task, scene)?;
    let total = task.milestones.as_ref().map_or(0, Vec::len);
    let reached = milestones_reached(&labels, task, scene)?;
    let su = success(trace, reached, total) == 1;
    let ps = process_score::<S>(&labels);
    let undefined = ps.is_none();
    let report = TaskReport::new(
        su,
        Some(ps.unwrap_or_else(S::zero)),
        agent_steps(trace),
        task.human_steps,
        Some(completion_rate(reached, task.human_steps)),
    );
    let report = if undefined { report.with_flag(Flag::PsUndefined) } else { report };
    report.check()?;
    Ok(report)
}

/// Manual judgments for a live trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanLabel {
    pub app: String,
    pub difficulty: u8,
    pub success: bool,
    pub correct_steps: u32,
    pub total_steps: u32,
    pub completed_human_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanLabelFile {
    pub labels: Vec<HumanLabel>,
}

pub fn load_human_labels(path: impl AsRef<Path>) -> Result<Vec<HumanLabel>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let file: HumanLabelFile = from_json_diagnosed(&text, &path.display().to_string())?;
    for l in &file.labels {
        if l.correct_steps > l.total_steps {
            return Err(EvalError::Invalid(format!("{} {}: correct_steps exceeds total_steps", l.app, l.difficulty)));
        }
    }
    Ok(file.labels)
}

/// Score a trace without milestones. With a human label PS and CR come from
/// it; otherwise they are left empty and SU reflects a confirmed Stop.
pub fn score_live_trace<S: Score>(trace: &Trace, task: &TaskSpec, label: Option<&HumanLabel>) -> TaskReport<S> {
    match label {
        Some(l) => {
            let ps = (l.total_steps > 0).then(|| S::ratio(l.correct_steps as usize, l.total_steps as usize));
            let report = TaskReport::new(
                l.success,
                Some(ps.unwrap_or_else(S::zero)),
                l.total_steps,
                task.human_steps,
                Some(completion_rate(l.completed_human_steps as usize, task.human_steps)),
            )
            .with_flag(Flag::HumanLabeled);
            if ps.is_none() {
                report.with_flag(Flag::PsUndefined)
            } else {
                report
            }
        }
        None => {
            let confirmed = trace.terminal == Some(TerminalStatus::Stopped)
                && (trace.config.completion_check_rounds == 0
                    || trace.steps.last().and_then(|s| s.verdict.as_ref()) == Some(&Verdict::Complete));
            TaskReport::new(confirmed, None, agent_steps(trace), task.human_steps, None)
                .with_flag(Flag::NeedsManualLabels)
                .with_flag(Flag::SelfReportedSuccess)
        }
    }
}
