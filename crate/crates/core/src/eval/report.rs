use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{from_json_diagnosed, EvalError, TaskReport};
use crate::score::Score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry<S> {
    pub app: String,
    pub difficulty: u8,
    pub report: TaskReport<S>,
}

/// Per-difficulty means over the tasks present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyAverage<S> {
    pub difficulty: u8,
    pub tasks: usize,
    pub su: S,
    /// Mean over tasks that have a PS.
    pub ps: Option<S>,
    pub cr: Option<S>,
    pub agent_steps: S,
    pub human_steps: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport<S> {
    pub entries: Vec<ReportEntry<S>>,
    pub averages: Vec<DifficultyAverage<S>>,
}

impl<S: Score> BenchReport<S> {
    pub fn average(&self, difficulty: u8) -> Option<&DifficultyAverage<S>> {
        self.averages.iter().find(|a| a.difficulty == difficulty)
    }

    pub fn entry(&self, app: &str, difficulty: u8) -> Option<&ReportEntry<S>> {
        self.entries.iter().find(|e| e.app == app && e.difficulty == difficulty)
    }
}

fn cmp_opt<S: Score>(a: &Option<S>, b: &Option<S>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.as_f64().total_cmp(&y.as_f64()),
        (x, y) => x.is_some().cmp(&y.is_some()),
    }
}

/// Canonical order used for summation, so floating-point means do not depend
/// on input order.
fn canonical<S: Score>(a: &ReportEntry<S>, b: &ReportEntry<S>) -> Ordering {
    (a.difficulty, &a.app, a.report.su, a.report.agent_steps, a.report.human_steps)
        .cmp(&(b.difficulty, &b.app, b.report.su, b.report.agent_steps, b.report.human_steps))
        .then_with(|| cmp_opt(&a.report.ps, &b.report.ps))
        .then_with(|| cmp_opt(&a.report.cr, &b.report.cr))
}

fn mean<S: Score>(values: impl Iterator<Item = S>) -> Option<S> {
    let (sum, n) = values.fold((S::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / S::from_usize(n).expect("count representable"))
}

/// Arithmetic means of SU, PS, CR and step counts for each difficulty.
pub fn aggregate<S: Score>(entries: Vec<ReportEntry<S>>) -> Result<BenchReport<S>, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for e in &entries {
        e.report.check()?;
    }
    let mut sorted: Vec<&ReportEntry<S>> = entries.iter().collect();
    sorted.sort_by(|a, b| canonical(a, b));
    let difficulties: BTreeSet<u8> = entries.iter().map(|e| e.difficulty).collect();
    let averages = difficulties
        .into_iter()
        .map(|d| {
            let group: Vec<&TaskReport<S>> =
                sorted.iter().filter(|e| e.difficulty == d).map(|e| &e.report).collect();
            let int = |v: u32| S::from_u32(v).expect("step count representable");
            DifficultyAverage {
                difficulty: d,
                tasks: group.len(),
                su: mean(group.iter().map(|r| int(r.su as u32))).expect("nonempty group"),
                ps: mean(group.iter().filter_map(|r| r.ps)),
                cr: mean(group.iter().filter_map(|r| r.cr)),
                agent_steps: mean(group.iter().map(|r| int(r.agent_steps))).expect("nonempty group"),
                human_steps: mean(group.iter().map(|r| int(r.human_steps))).expect("nonempty group"),
            }
        })
        .collect();
    Ok(BenchReport { entries, averages })
}

fn fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

fn percent<S: Score>(v: Option<S>) -> String {
    v.map_or("-".into(), |x| format!("{:.1}%", x.as_f64() * 100.0))
}

/// Fixed-width table with one row per app and an `Avg.` row, three
/// four-column groups (SU, PS, RE, CR) for the difficulties.
pub fn render_table<S: Score>(report: &BenchReport<S>) -> String {
    const APP_W: usize = 14;
    const CELLS: [usize; 4] = [4, 5, 11, 7];
    let mut apps: Vec<&str> = Vec::new();
    for e in &report.entries {
        if !apps.contains(&e.app.as_str()) {
            apps.push(&e.app);
        }
    }
    let group_w: usize = CELLS.iter().sum::<usize>() + CELLS.len() - 1;
    let cells = |values: [String; 4]| {
        values.iter().zip(CELLS).map(|(v, w)| format!("{v:>w$}")).collect::<Vec<_>>().join(" ")
    };

    let mut out = String::new();
    let _ = write!(out, "{:<APP_W$}", "App");
    for d in 1..=3 {
        let _ = write!(out, " | {:^group_w$}", format!("Instruction {d}"));
    }
    out.push('\n');
    let _ = write!(out, "{:<APP_W$}", "");
    for _ in 1..=3 {
        let _ = write!(out, " | {}", cells(["SU", "PS", "RE", "CR"].map(String::from)));
    }
    out.push('\n');
    let rule = "-".repeat(APP_W + 3 * (group_w + 3));
    let _ = writeln!(out, "{rule}");

    for app in &apps {
        let _ = write!(out, "{app:<APP_W$}");
        for d in 1..=3 {
            let row = match report.entry(app, d) {
                Some(e) => {
                    let r = &e.report;
                    [
                        r.su.to_string(),
                        r.ps.map_or("-".into(), |p| fixed(p.as_f64(), 2)),
                        format!("{} / {}", r.agent_steps, r.human_steps),
                        percent(r.cr),
                    ]
                }
                None => ["", "", "", ""].map(String::from),
            };
            let _ = write!(out, " | {}", cells(row));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "{rule}");
    let _ = write!(out, "{:<APP_W$}", "Avg.");
    for d in 1..=3 {
        let row = match report.average(d) {
            Some(a) => [
                fixed(a.su.as_f64(), 2),
                a.ps.map_or("-".into(), |p| fixed(p.as_f64(), 2)),
                format!("{} / {}", fixed(a.agent_steps.as_f64(), 1), fixed(a.human_steps.as_f64(), 1)),
                percent(a.cr),
            ],
            None => ["", "", "", ""].map(String::from),
        };
        let _ = write!(out, " | {}", cells(row));
    }
    out.push('\n');
    out
}

/// Write `path` as JSON and the rendered table next to it with a `.txt` extension.
pub fn export_report<S: Score + Serialize>(report: &BenchReport<S>, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io = |source| EvalError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(io)?;
    std::fs::write(path.with_extension("txt"), render_table(report)).map_err(io)?;
    Ok(())
}

pub fn load_report<S: Score + DeserializeOwned>(path: impl AsRef<Path>) -> Result<BenchReport<S>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    from_json_diagnosed(&text, &path.display().to_string())
}
