//! Prompt text: the system prompt, history summaries, reflection messages and
//! the completion and candidate-selection requests.

use std::fmt::Write as _;

use crate::action::{render_action, Action, Operation};

use super::trace::{Phase, StepRecord, StepStatus};

/// Build the per-session system prompt. Deterministic in `instruction`.
pub fn build_system_prompt(instruction: &str) -> String {
    assert!(!instruction.trim().is_empty(), "instruction must be nonempty");
    let mut p = String::new();
    p.push_str("You operate an Android phone for a user, looking only at screenshots of its screen.\n");
    let _ = writeln!(p, "User instruction: {}", instruction.trim());
    p.push_str(
        "\nEach turn you receive the history of operations so far and a screenshot of the current screen. \
         Pick exactly one of these 8 operations:\n",
    );
    let menu: [(Operation, &str, &str); 8] = [
        (Operation::OpenApp, "Open App (App)", "launch the App whose name is App from the desktop."),
        (Operation::ClickText, "Click the text (Text)", "tap where the text Text is shown on screen."),
        (
            Operation::ClickIcon,
            "Click the icon (Icon, Position)",
            "tap the icon described by Icon (give its color and shape). Position is one or two of top, bottom, \
             left, right, center, e.g. \"Click the icon (red round icon, top, right)\".",
        ),
        (Operation::TypeText, "Type (Text)", "enter Text into the input box that currently has focus."),
        (Operation::Scroll, "Page up & down", "write \"Page up\" or \"Page down\" to scroll the current page."),
        (Operation::Back, "Back", "go back to the previous page."),
        (Operation::Exit, "Exit", "leave the current app and go straight to the desktop."),
        (Operation::Stop, "Stop", "the instruction has been carried out; finish."),
    ];
    for (i, (op, form, what)) in menu.iter().enumerate() {
        debug_assert_eq!(Operation::ALL[i], *op);
        let _ = writeln!(p, "{}. {form}: {what}", i + 1);
    }
    p.push_str(
        "\nAnswer in exactly three parts:\n\
         Observation: what the current screenshot shows, and what the operation history tells you about progress.\n\
         Thought: your reasoning about which step to take next, toward the instruction.\n\
         Action: one of the 8 operations above with its parameters, on a single line.\n",
    );
    p
}

/// One compact history line per step, e.g. `3. Click the text (Save) [executed, screen changed]`.
pub fn history_line(step: &StepRecord) -> String {
    let action = step
        .turn
        .as_ref()
        .and_then(|t| t.parsed.as_ref())
        .map(|t| render_action(&t.action));
    let what = match (&step.phase, &action) {
        (Phase::CompletionCheck, _) => {
            let verdict = step.verdict.as_ref().map(|v| v.to_string()).unwrap_or_default();
            return format!("{}. (completion check: {verdict})", step.index + 1);
        }
        (_, Some(a)) => a.clone(),
        (_, None) => "(unparseable reply)".to_string(),
    };
    let status = match (step.status, step.change) {
        (StepStatus::Executed, Some(c)) if c.changed => "executed, screen changed",
        (StepStatus::Executed, Some(_)) => "executed, screen did not change",
        (StepStatus::Executed, None) => "executed",
        (StepStatus::Invalid, _) => "not executed",
        (StepStatus::ParseFailed, _) => "reply not understood",
    };
    match &step.note {
        Some(note) => format!("{}. {what} [{status}: {note}]", step.index + 1),
        None => format!("{}. {what} [{status}]", step.index + 1),
    }
}

pub fn history_text(steps: &[StepRecord]) -> String {
    if steps.is_empty() {
        return "Operation history: none yet.".to_string();
    }
    let mut out = String::from("Operation history:\n");
    for s in steps {
        out.push_str(&history_line(s));
        out.push('\n');
    }
    out
}

/// Why grounding or execution refused the last action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WrongPageCause {
    TextNotFound,
    TooManyMatches(usize),
    IconNotFound,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReflectionKind {
    /// The last executed operation left the screen unchanged.
    Stuck,
    /// The last operation could not be placed on the current screen.
    WrongPage(WrongPageCause),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reflection needs at least one step in the trace")]
pub struct EmptyTrace;

fn last_action(steps: &[StepRecord]) -> Option<&Action> {
    steps
        .iter()
        .rev()
        .filter(|s| s.phase != Phase::CompletionCheck)
        .find_map(|s| s.turn.as_ref().and_then(|t| t.parsed.as_ref()).map(|t| &t.action))
}

/// Extra user message directing the agent away from a failed operation.
pub fn reflection_prompt(kind: &ReflectionKind, steps: &[StepRecord]) -> Result<String, EmptyTrace> {
    if steps.is_empty() {
        return Err(EmptyTrace);
    }
    let action = last_action(steps).map(render_action).unwrap_or_else(|| "(unknown)".into());
    let target = match last_action(steps) {
        Some(Action::ClickText { text }) => text.clone(),
        Some(Action::ClickIcon { description, .. }) => description.clone(),
        _ => String::new(),
    };
    Ok(match kind {
        ReflectionKind::Stuck => format!(
            "Reflection: after the operation \"{action}\" the screenshot did not change, so it was invalid or \
             missed its target. Try an alternative operation, or change the parameters of this one."
        ),
        ReflectionKind::WrongPage(WrongPageCause::TextNotFound) => format!(
            "Reflection: the text \"{target}\" from \"{action}\" is not on the current screen. Reselect the text \
             for tapping, or choose another operation."
        ),
        ReflectionKind::WrongPage(WrongPageCause::TooManyMatches(n)) => format!(
            "Reflection: the text \"{target}\" from \"{action}\" appears {n} times on the screen, too many to tell \
             apart. Reselect the text for tapping, or choose another operation."
        ),
        ReflectionKind::WrongPage(WrongPageCause::IconNotFound) => format!(
            "Reflection: no icon matching \"{target}\" was found in the requested position for \"{action}\". \
             Describe the icon differently, change the position, or choose another operation."
        ),
        ReflectionKind::WrongPage(WrongPageCause::Rejected(reason)) => format!(
            "Reflection: the operation \"{action}\" could not be carried out ({reason}). This may be the wrong \
             page; choose another operation or modify its parameters."
        ),
    })
}

pub fn format_reminder(error: &str) -> String {
    format!(
        "Your previous reply could not be read ({error}). Reply again with exactly three lines starting with \
         \"Observation:\", \"Thought:\" and \"Action:\", where the Action is one of the 8 operations."
    )
}

/// Sent after the agent chooses Stop.
pub fn completion_check_prompt(instruction: &str, steps: &[StepRecord]) -> String {
    format!(
        "The agent has chosen Stop.\nUser instruction: {}\n{}\nLook at the operations, the history and the \
         current screenshot, and decide whether every part of the instruction has been completed. Reply with \
         \"Complete\" if it has, otherwise \"Continue: <what is still missing>\".",
        instruction.trim(),
        history_text(steps)
    )
}

pub fn continue_message(reason: &str) -> String {
    format!(
        "Reflection: the instruction is not yet complete ({reason}). Continue generating operations to finish it."
    )
}

pub fn selection_prompt(text: &str, count: usize) -> String {
    format!(
        "The text \"{text}\" appears {count} times on the screen. Each of the following {count} images shows one \
         occurrence outlined in red and labeled with its number. Reply with only the number of the occurrence to tap."
    )
}
