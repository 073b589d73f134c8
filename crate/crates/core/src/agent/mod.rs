//! The plan-act loop: prompt the model with the latest screenshot, parse its
//! action, ground it, execute it, check for a stuck screen and confirm Stop.

pub mod mllm;
pub mod prompt;
pub mod trace;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::action::{parse_agent_turn, validate_action, Action, AgentTurn};
use crate::codec::pixel_hash;
use crate::device::{screen_changed, translate, Device, ScreenCapture};
use crate::perception::{
    locate_icon, locate_text, GroundingOutcome, GroundingParams, PerceptionBackends, PerceptionError,
};

pub use mllm::{HttpMllm, HttpMllmConfig, Message, MllmBackend, MllmError, Part, Recording, Role, ScriptedBackend};
pub use prompt::{build_system_prompt, reflection_prompt, ReflectionKind, WrongPageCause};
pub use trace::{Phase, StepRecord, StepStatus, TerminalStatus, Trace, TraceError, TurnRecord, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Upper bound on planning steps, stuck-recovery steps included.
    pub max_iterations: usize,
    /// Consecutive unchanged executed steps that trigger a stuck reflection.
    pub stuck_patience: usize,
    /// Re-prompts after an unparseable reply before aborting.
    pub parse_retries: usize,
    /// Stop confirmations allowed per session; 0 accepts Stop unchecked.
    pub completion_check_rounds: usize,
    pub change_tolerance: f64,
    pub many_threshold: usize,
    pub pad_factor: f64,
    pub settle_ms: u64,
    /// Wall-clock budget for the whole session.
    pub timeout_ms: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            stuck_patience: 1,
            parse_retries: 2,
            completion_check_rounds: 2,
            change_tolerance: crate::device::DEFAULT_CHANGE_TOLERANCE,
            many_threshold: 5,
            pad_factor: 0.25,
            settle_ms: 2000,
            timeout_ms: None,
        }
    }
}

impl SessionConfig {
    pub fn grounding(&self) -> GroundingParams {
        GroundingParams { many_threshold: self.many_threshold, pad_factor: self.pad_factor }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.stuck_patience == 0 {
            return Err("stuck_patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.change_tolerance) {
            return Err("change_tolerance must be in [0, 1)".into());
        }
        if !(self.pad_factor >= 0.0 && self.pad_factor.is_finite()) {
            return Err("pad_factor must be a nonnegative number".into());
        }
        if self.many_threshold < 2 {
            return Err("many_threshold must be at least 2".into());
        }
        Ok(())
    }
}

/// Shared flag that aborts a running session at its next step.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error(transparent)]
    Backend(#[from] MllmError),
    #[error("no parseable reply after {attempts} attempts: {error}")]
    Unparseable { attempts: usize, error: String, replies: Vec<String> },
}

/// A parsed turn with the replies rejected on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub turn: AgentTurn,
    pub rejected: Vec<String>,
}

/// Ask the model for the next turn. The request carries the system prompt,
/// the history as text, an optional reflection and exactly one screenshot.
/// Unparseable replies are retried with a format reminder.
pub fn next_turn(
    system_prompt: &str,
    history: &[StepRecord],
    capture: &ScreenCapture,
    reflection: Option<&str>,
    backend: &mut dyn MllmBackend,
    parse_retries: usize,
) -> Result<TurnOutcome, TurnError> {
    let mut parts = vec![Part::Text(prompt::history_text(history))];
    if let Some(r) = reflection {
        parts.push(Part::Text(r.to_string()));
    }
    parts.push(Part::Text("Current screenshot:".into()));
    parts.push(Part::Image(Arc::new(capture.image.clone())));
    let mut request = vec![Message::text(Role::System, system_prompt), Message { role: Role::User, parts }];

    let mut rejected = Vec::new();
    loop {
        let reply = backend.complete(&request)?;
        match parse_agent_turn(&reply) {
            Ok(turn) => return Ok(TurnOutcome { turn, rejected }),
            Err(e) => {
                warn!(error = %e, "unparseable reply");
                rejected.push(reply.clone());
                if rejected.len() > parse_retries {
                    return Err(TurnError::Unparseable { attempts: rejected.len(), error: e.to_string(), replies: rejected });
                }
                request.push(Message::text(Role::Assistant, reply));
                request.push(Message::text(Role::User, prompt::format_reminder(&e.to_string())));
            }
        }
    }
}

/// True when the last `patience` executed operations all left the screen unchanged.
pub fn detect_stuck(steps: &[StepRecord], patience: usize) -> bool {
    if patience == 0 {
        return false;
    }
    let recent: Vec<bool> = steps
        .iter()
        .rev()
        .filter(|s| s.is_planning() && s.status == StepStatus::Executed)
        .filter_map(|s| s.change.map(|c| c.changed))
        .take(patience)
        .collect();
    recent.len() == patience && recent.iter().all(|changed| !changed)
}

/// Read a completion verdict from its first word.
pub fn parse_verdict(reply: &str) -> Verdict {
    let trimmed = reply.trim().trim_start_matches(|c: char| !c.is_alphanumeric());
    let trimmed = trimmed
        .strip_prefix("Verdict")
        .or_else(|| trimmed.strip_prefix("verdict"))
        .map(|r| r.trim_start_matches(|c: char| matches!(c, ':' | '*' | '_') || c.is_whitespace()))
        .unwrap_or(trimmed);
    let word: String = trimmed.chars().take_while(|c| c.is_alphabetic()).collect::<String>().to_lowercase();
    let rest = trimmed[word.len()..].trim_start_matches([':', '.', ',', '-']);
    match word.as_str() {
        "complete" | "completed" | "done" | "yes" => Verdict::Complete,
        "continue" | "incomplete" | "no" | "not" => Verdict::Continue(rest.trim().to_string()),
        _ => Verdict::Continue(format!("unrecognized verdict: {}", reply.trim())),
    }
}

/// Ask the model whether the instruction is done, given the trace and the current screen.
pub fn completion_check(
    instruction: &str,
    steps: &[StepRecord],
    capture: &ScreenCapture,
    backend: &mut dyn MllmBackend,
) -> Result<Verdict, MllmError> {
    let request = vec![Message {
        role: Role::User,
        parts: vec![
            Part::Text(prompt::completion_check_prompt(instruction, steps)),
            Part::Image(Arc::new(capture.image.clone())),
        ],
    }];
    Ok(parse_verdict(&backend.complete(&request)?))
}

/// First integer in `reply` if it names one of `count` candidates.
pub fn parse_selection(reply: &str, count: usize) -> Option<usize> {
    let digits: String = reply.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
    digits.parse().ok().filter(|i| (1..=count).contains(i))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

enum Grounded {
    Ready(Option<GroundingOutcome>),
    Refused(WrongPageCause, String),
}

struct Session<'a> {
    instruction: &'a str,
    device: &'a mut dyn Device,
    perception: &'a PerceptionBackends,
    mllm: &'a mut dyn MllmBackend,
    config: &'a SessionConfig,
    cancel: Option<&'a CancelToken>,
    trace: Trace,
}

impl Session<'_> {
    fn capture(&mut self) -> Result<ScreenCapture, String> {
        let cap = self.device.capture().map_err(|e| format!("capture failed: {e}"))?;
        let hash = pixel_hash(&cap.image);
        self.trace.captures.entry(hash).or_insert_with(|| cap.image.clone());
        Ok(cap)
    }

    fn ground(&mut self, action: &Action, cap: &ScreenCapture, step: &mut StepRecord) -> Result<Grounded, String> {
        let params = self.config.grounding();
        let outcome = match action {
            Action::ClickText { text } => locate_text(&cap.image, text, self.perception, &params),
            Action::ClickIcon { description, positions } => {
                locate_icon(&cap.image, description, positions, self.perception)
            }
            _ => return Ok(Grounded::Ready(None)),
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e @ PerceptionError::InvalidInput(_)) => {
                return Ok(Grounded::Refused(WrongPageCause::Rejected(e.to_string()), e.to_string()))
            }
            Err(e) => return Err(format!("perception failed: {e}")),
        };
        step.grounding = Some(outcome.clone());
        let is_icon = matches!(action, Action::ClickIcon { .. });
        Ok(match outcome {
            GroundingOutcome::Resolved { .. } => Grounded::Ready(Some(outcome)),
            GroundingOutcome::NotFound if is_icon => Grounded::Refused(WrongPageCause::IconNotFound, "icon not found".into()),
            GroundingOutcome::NotFound => Grounded::Refused(WrongPageCause::TextNotFound, "text not found".into()),
            GroundingOutcome::TooMany { count } => {
                Grounded::Refused(WrongPageCause::TooManyMatches(count), format!("{count} matches"))
            }
            GroundingOutcome::Ambiguous { candidates } => {
                let Action::ClickText { text } = action else { unreachable!("only text grounding is ambiguous") };
                let mut parts = vec![Part::Text(prompt::selection_prompt(text, candidates.len()))];
                parts.extend(candidates.iter().map(|c| Part::Image(Arc::new(c.image.clone()))));
                let reply = self
                    .mllm
                    .complete(&[Message { role: Role::User, parts }])
                    .map_err(|e| format!("model failed: {e}"))?;
                match parse_selection(&reply, candidates.len()) {
                    Some(i) => {
                        step.selection = Some(i);
                        Grounded::Ready(Some(GroundingOutcome::Resolved { point: candidates[i - 1].bbox.center() }))
                    }
                    None => Grounded::Refused(
                        WrongPageCause::Rejected(format!("no valid candidate chosen from {}", candidates.len())),
                        format!("invalid selection {:?}", reply.trim()),
                    ),
                }
            }
        })
    }

    fn run(mut self) -> Trace {
        let started = Instant::now();
        self.trace.started_at_ms = now_ms();
        let system = build_system_prompt(self.instruction);
        let timeout = self.config.timeout_ms.map(Duration::from_millis);
        let mut pending: Option<(String, Phase)> = None;
        let mut current: Option<ScreenCapture> = None;
        let mut checks = 0usize;

        let terminal = loop {
            if self.cancel.is_some_and(CancelToken::is_cancelled) {
                break TerminalStatus::Aborted("cancelled".into());
            }
            if timeout.is_some_and(|t| started.elapsed() >= t) {
                break TerminalStatus::Aborted("timed out".into());
            }
            if self.trace.planning_steps().count() >= self.config.max_iterations {
                break TerminalStatus::Exhausted;
            }
            let cap = match current.take() {
                Some(c) => c,
                None => match self.capture() {
                    Ok(c) => c,
                    Err(e) => break TerminalStatus::Aborted(e),
                },
            };
            let step_start = Instant::now();
            let (reflection, phase) = match pending.take() {
                Some((text, phase)) => (Some(text), phase),
                None => (None, Phase::Planning),
            };
            let mut step = StepRecord::new(self.trace.steps.len(), phase, cap.sequence, pixel_hash(&cap.image));
            step.reflection = reflection.clone();

            let outcome = next_turn(
                &system,
                &self.trace.steps,
                &cap,
                reflection.as_deref(),
                self.mllm,
                self.config.parse_retries,
            );
            let turn = match outcome {
                Ok(t) => t,
                Err(TurnError::Unparseable { error, mut replies, .. }) => {
                    let raw = replies.pop().unwrap_or_default();
                    step.turn = Some(TurnRecord { raw, parsed: None, rejected: replies });
                    step.status = StepStatus::ParseFailed;
                    step.note = Some(error.clone());
                    step.elapsed_ms = step_start.elapsed().as_millis() as u64;
                    self.trace.steps.push(step);
                    break TerminalStatus::Aborted(format!("unparseable reply: {error}"));
                }
                Err(TurnError::Backend(e)) => break TerminalStatus::Aborted(format!("model failed: {e}")),
            };
            let action = turn.turn.action.clone();
            info!(step = step.index, action = %crate::action::render_action(&action), "planned");
            step.turn = Some(TurnRecord { raw: turn.turn.raw.clone(), parsed: Some(turn.turn), rejected: turn.rejected });

            let violations = validate_action(&action);
            if !violations.is_empty() {
                let why = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                self.refuse(step, step_start, WrongPageCause::Rejected(why.clone()), why, &mut pending);
                continue;
            }

            if action.is_stop() {
                step.elapsed_ms = step_start.elapsed().as_millis() as u64;
                self.trace.steps.push(step);
                if self.config.completion_check_rounds == 0 {
                    break TerminalStatus::Stopped;
                }
                if checks >= self.config.completion_check_rounds {
                    break TerminalStatus::Aborted(format!(
                        "completion not confirmed after {checks} checks"
                    ));
                }
                checks += 1;
                let check_cap = match self.capture() {
                    Ok(c) => c,
                    Err(e) => break TerminalStatus::Aborted(e),
                };
                let check_start = Instant::now();
                let mut check = StepRecord::new(
                    self.trace.steps.len(),
                    Phase::CompletionCheck,
                    check_cap.sequence,
                    pixel_hash(&check_cap.image),
                );
                let verdict = match completion_check(self.instruction, &self.trace.steps, &check_cap, self.mllm) {
                    Ok(v) => v,
                    Err(e) => break TerminalStatus::Aborted(format!("model failed: {e}")),
                };
                info!(%verdict, "completion check");
                check.verdict = Some(verdict.clone());
                check.elapsed_ms = check_start.elapsed().as_millis() as u64;
                self.trace.steps.push(check);
                match verdict {
                    Verdict::Complete => break TerminalStatus::Stopped,
                    Verdict::Continue(reason) => {
                        let reason = if reason.is_empty() { "the checker found work left".to_string() } else { reason };
                        pending = Some((prompt::continue_message(&reason), Phase::Planning));
                    }
                }
                continue;
            }

            let grounding = match self.ground(&action, &cap, &mut step) {
                Ok(Grounded::Ready(g)) => g,
                Ok(Grounded::Refused(cause, note)) => {
                    self.refuse(step, step_start, cause, note, &mut pending);
                    continue;
                }
                Err(e) => break TerminalStatus::Aborted(e),
            };

            let catalog = self.device.app_catalog();
            let commands = match translate(&action, grounding.as_ref(), self.device.dimensions(), &catalog) {
                Ok(c) => c,
                Err(e) => {
                    self.refuse(step, step_start, WrongPageCause::Rejected(e.to_string()), e.to_string(), &mut pending);
                    continue;
                }
            };
            let mut failure = None;
            for cmd in &commands {
                debug!(?cmd, "execute");
                if let Err(e) = self.device.execute(cmd) {
                    failure = Some(format!("device failed: {e}"));
                    break;
                }
            }
            if let Some(f) = failure {
                break TerminalStatus::Aborted(f);
            }
            step.commands = commands;
            self.device.settle(Duration::from_millis(self.config.settle_ms));
            let after = match self.capture() {
                Ok(c) => c,
                Err(e) => break TerminalStatus::Aborted(e),
            };
            step.change = Some(screen_changed(&cap.image, &after.image, self.config.change_tolerance));
            step.after_seq = Some(after.sequence);
            step.after_hash = Some(pixel_hash(&after.image));
            step.elapsed_ms = step_start.elapsed().as_millis() as u64;
            self.trace.steps.push(step);
            current = Some(after);

            if detect_stuck(&self.trace.steps, self.config.stuck_patience) {
                let text = reflection_prompt(&ReflectionKind::Stuck, &self.trace.steps).expect("trace is nonempty");
                pending = Some((text, Phase::StuckRecovery));
            }
        };

        info!(terminal = terminal.label(), steps = self.trace.steps.len(), "session finished");
        self.trace.terminal = Some(terminal);
        self.trace.finished_at_ms = now_ms();
        self.trace
    }

    fn refuse(
        &mut self,
        mut step: StepRecord,
        started: Instant,
        cause: WrongPageCause,
        note: String,
        pending: &mut Option<(String, Phase)>,
    ) {
        step.status = StepStatus::Invalid;
        step.note = Some(note);
        step.elapsed_ms = started.elapsed().as_millis() as u64;
        self.trace.steps.push(step);
        let text = reflection_prompt(&ReflectionKind::WrongPage(cause), &self.trace.steps).expect("trace is nonempty");
        *pending = Some((text, Phase::StuckRecovery));
    }
}

/// Drive `device` until the agent stops, the budget runs out or something fails.
pub fn run_instruction(
    instruction: &str,
    device: &mut dyn Device,
    perception: &PerceptionBackends,
    mllm: &mut dyn MllmBackend,
    config: &SessionConfig,
) -> Trace {
    run_instruction_with_cancel(instruction, device, perception, mllm, config, None)
}

pub fn run_instruction_with_cancel(
    instruction: &str,
    device: &mut dyn Device,
    perception: &PerceptionBackends,
    mllm: &mut dyn MllmBackend,
    config: &SessionConfig,
    cancel: Option<&CancelToken>,
) -> Trace {
    let trace = Trace::new(instruction, config.clone(), device.describe());
    Session { instruction, device, perception, mllm, config, cancel, trace }.run()
}
