use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{anyhow, Context};
use mobile_agent::action::ScrollDirection;
use mobile_agent::agent::{HttpMllm, HttpMllmConfig, MllmBackend, MllmError, ScriptedBackend, TerminalStatus, Trace};
use mobile_agent::codec::encode_png;
use mobile_agent::device::adb::AdbDevice;
use mobile_agent::device::{scroll_swipe, Device, DeviceCommand, KEYCODE_BACK, KEYCODE_HOME};
use mobile_agent::eval::{
    aggregate, export_report, load_human_labels, load_tasks, render_table, score_live_trace, score_sim_trace,
    HumanLabel, ReportEntry, TaskSpec,
};
use mobile_agent::perception::http::HttpPerception;
use mobile_agent::perception::PerceptionBackends;
use mobile_agent::simulator::{sim_execute, sim_render_image, SceneGraph, SimDevice, SimState};
use mobile_agent::{run_instruction, TaskReport};
use tracing::{info, warn};

use crate::config::{load_settings, MllmSpec, PerceptionSpec, Settings, Target};
use crate::{CliError, EXIT_ABORTED, EXIT_EXHAUSTED, EXIT_STOPPED};

const PERCEPTION_TIMEOUT: Duration = Duration::from_secs(60);

pub fn exit_code(status: Option<&TerminalStatus>) -> i32 {
    match status {
        Some(TerminalStatus::Stopped) => EXIT_STOPPED,
        Some(TerminalStatus::Exhausted) => EXIT_EXHAUSTED,
        Some(TerminalStatus::Aborted(_)) | None => EXIT_ABORTED,
    }
}

fn build_mllm(spec: &MllmSpec, model: &str) -> Result<Box<dyn MllmBackend>, CliError> {
    match spec {
        MllmSpec::Scripted(path) => {
            let backend = ScriptedBackend::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Box::new(backend))
        }
        MllmSpec::Remote(url) => match HttpMllm::from_env(HttpMllmConfig::new(url.clone(), model)) {
            Ok(client) => Ok(Box::new(client)),
            Err(e @ MllmError::MissingApiKey) => Err(CliError::Config(e.to_string())),
            Err(e) => Err(CliError::Runtime(anyhow!(e).context("building the model client"))),
        },
    }
}

fn remote_perception(url: &str) -> Result<PerceptionBackends, CliError> {
    let client = HttpPerception::new(url, PERCEPTION_TIMEOUT).map_err(|e| CliError::Config(format!("{url}: {e}")))?;
    Ok(PerceptionBackends::uniform(client))
}

fn load_scene(path: &Path) -> Result<SceneGraph, CliError> {
    SceneGraph::load(path).map_err(|e| CliError::Config(format!("scene {}: {e}", path.display())))
}

/// Open the device and the perception stack that goes with it.
fn open_target(
    target: &Target,
    perception: Option<&PerceptionSpec>,
    apps: &[(String, String)],
) -> Result<(Box<dyn Device>, PerceptionBackends), CliError> {
    match target {
        Target::Sim(path) => {
            let device = SimDevice::new(load_scene(path)?);
            let backends = match perception {
                None | Some(PerceptionSpec::Oracle) => device.oracle().into_backends(),
                Some(PerceptionSpec::Remote(url)) => remote_perception(url)?,
            };
            Ok((Box::new(device), backends))
        }
        Target::Device(serial) => {
            let backends = match perception {
                Some(PerceptionSpec::Remote(url)) => remote_perception(url)?,
                Some(PerceptionSpec::Oracle) => {
                    return Err(CliError::Config("oracle perception needs a simulator target".into()))
                }
                None => return Err(CliError::Config("a physical device needs --perception URL".into())),
            };
            let device = AdbDevice::connect(Some(serial.clone()), apps.to_vec())
                .with_context(|| format!("connecting to {serial}"))?;
            Ok((Box::new(device), backends))
        }
    }
}

fn execute(
    instruction: &str,
    target: &Target,
    mllm: &MllmSpec,
    settings: &Settings,
) -> Result<Trace, CliError> {
    let mut model = build_mllm(mllm, &settings.model)?;
    let (mut device, perception) = open_target(target, settings.perception.as_ref(), &settings.apps)?;
    info!(instruction, "starting session");
    Ok(run_instruction(instruction, device.as_mut(), &perception, model.as_mut(), &settings.session))
}

/// One line per trace step.
pub fn summarize(trace: &Trace) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        let _ = write!(out, "#{:<3} {:<15} {:<12}", step.index, format!("{:?}", step.phase), format!("{:?}", step.status));
        if let Some(action) = step.action() {
            let _ = write!(out, " {action}");
        }
        if let Some(verdict) = &step.verdict {
            let _ = write!(out, " verdict: {verdict}");
        }
        if let Some(change) = &step.change {
            if !change.changed {
                out.push_str(" (screen unchanged)");
            }
        }
        if let Some(note) = &step.note {
            let _ = write!(out, " [{note}]");
        }
        out.push('\n');
    }
    match &trace.terminal {
        Some(TerminalStatus::Aborted(reason)) => {
            let _ = writeln!(out, "terminal: aborted ({reason})");
        }
        Some(t) => {
            let _ = writeln!(out, "terminal: {}", t.label());
        }
        None => out.push_str("terminal: none\n"),
    }
    out
}

pub fn cmd_run(instruction: &str, options: &crate::Options) -> Result<i32, CliError> {
    let settings = load_settings(options)?;
    let target = settings.target.clone().ok_or_else(|| CliError::Config("give --device SERIAL or --sim SCENE".into()))?;
    let mllm = settings.mllm.clone().ok_or_else(|| CliError::Config("give --mllm URL or scripted:PATH".into()))?;
    let trace = execute(instruction, &target, &mllm, &settings)?;
    trace.write_dir(&settings.out).with_context(|| format!("writing trace to {}", settings.out.display()))?;
    print!("{}", summarize(&trace));
    println!("trace written to {}", settings.out.display());
    Ok(exit_code(trace.terminal.as_ref()))
}

fn slug(text: &str) -> String {
    let s: String = text.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

struct Job {
    dir: PathBuf,
    target: Target,
    mllm: MllmSpec,
}

fn plan(index: usize, task: &TaskSpec, settings: &Settings) -> Result<Job, CliError> {
    let target = match (&task.scene, &settings.target) {
        (Some(scene), _) => Target::Sim(scene.clone()),
        (None, Some(t)) => t.clone(),
        (None, None) => {
            return Err(CliError::Config(format!("task {index} has no scene; give --device or --sim")));
        }
    };
    let mllm = match (&settings.mllm, &task.script) {
        (Some(m), _) => m.clone(),
        (None, Some(script)) => MllmSpec::Scripted(script.clone()),
        (None, None) => return Err(CliError::Config(format!("task {index} has no script; give --mllm"))),
    };
    let dir = settings.out.join(format!("{index:02}_{}_{}", slug(&task.app), task.difficulty));
    Ok(Job { dir, target, mllm })
}

fn score_task(
    trace: &Trace,
    task: &TaskSpec,
    target: &Target,
    labels: &[HumanLabel],
) -> Result<TaskReport, CliError> {
    match target {
        Target::Sim(path) if task.milestones.is_some() => {
            let scene = load_scene(path)?;
            Ok(score_sim_trace(trace, task, &scene).context("scoring trace")?)
        }
        _ => {
            let label = labels.iter().find(|l| l.app == task.app && l.difficulty == task.difficulty);
            Ok(score_live_trace(trace, task, label))
        }
    }
}

pub fn cmd_bench(options: &crate::Options) -> Result<i32, CliError> {
    let settings = load_settings(options)?;
    let path = settings.tasks.clone().ok_or_else(|| CliError::Config("give --tasks PATH".into()))?;
    let tasks = load_tasks(&path).map_err(|e| CliError::Config(e.to_string()))?;
    let labels = match &settings.labels {
        Some(p) => load_human_labels(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => Vec::new(),
    };
    let jobs = tasks.iter().enumerate().map(|(i, t)| plan(i, t, &settings)).collect::<Result<Vec<_>, _>>()?;
    let mut workers = settings.parallel.min(jobs.len()).max(1);
    if workers > 1 && jobs.iter().any(|j| matches!(j.target, Target::Device(_))) {
        warn!("physical device targets run one task at a time");
        workers = 1;
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Trace, CliError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let outcome = execute(&tasks[i].instruction, &job.target, &job.mllm, &settings).and_then(|trace| {
                    trace.write_dir(&job.dir).with_context(|| format!("writing {}", job.dir.display()))?;
                    Ok(trace)
                });
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });

    let mut entries = Vec::with_capacity(tasks.len());
    for ((task, job), result) in tasks.iter().zip(&jobs).zip(results.into_inner().expect("results lock")) {
        let trace = result.expect("every job ran")?;
        let report = score_task(&trace, task, &job.target, &labels)?;
        println!(
            "{} (level {}): {} in {} steps -> {}",
            task.app,
            task.difficulty,
            trace.terminal.as_ref().map_or("none", TerminalStatus::label),
            report.agent_steps,
            job.dir.display()
        );
        entries.push(ReportEntry { app: task.app.clone(), difficulty: task.difficulty, report });
    }
    let report = aggregate(entries).context("aggregating")?;
    let table = render_table(&report);
    export_report(&report, settings.out.join("report.json")).context("writing report.json")?;
    std::fs::write(settings.out.join("report.txt"), &table).context("writing report.txt")?;
    print!("{table}");
    Ok(EXIT_STOPPED)
}

/// Human-readable form of a task report.
pub fn format_report(report: &TaskReport) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    let mut out = format!(
        "SU {}  PS {}  RE {}/{} ({:.2})  CR {}",
        report.su,
        opt(report.ps),
        report.agent_steps,
        report.human_steps,
        report.relative_efficiency(),
        opt(report.cr)
    );
    if !report.flags.is_empty() {
        let flags: Vec<String> = report.flags.iter().map(|f| format!("{f:?}")).collect();
        let _ = write!(out, "  flags: {}", flags.join(", "));
    }
    out
}

pub fn cmd_score(trace_path: &Path, index: Option<usize>, options: &crate::Options) -> Result<i32, CliError> {
    let settings = load_settings(options)?;
    let path = settings.tasks.clone().ok_or_else(|| CliError::Config("give --tasks PATH".into()))?;
    let tasks = load_tasks(&path).map_err(|e| CliError::Config(e.to_string()))?;
    let trace = Trace::read(trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let task = match index {
        Some(i) => tasks.get(i).ok_or_else(|| CliError::Config(format!("no task {i} in {}", path.display())))?,
        None => tasks.iter().find(|t| t.instruction == trace.instruction).ok_or_else(|| {
            CliError::Config(format!("no task in {} has the instruction {:?}", path.display(), trace.instruction))
        })?,
    };
    let target = match (&settings.target, &task.scene) {
        (Some(Target::Sim(scene)), _) => Target::Sim(scene.clone()),
        (_, Some(scene)) => Target::Sim(scene.clone()),
        (Some(t), None) => t.clone(),
        (None, None) => Target::Device(trace.device.name.clone().unwrap_or_default()),
    };
    let labels = match &settings.labels {
        Some(p) => load_human_labels(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => Vec::new(),
    };
    let report = score_task(&trace, task, &target, &labels)?;
    println!("{} (level {})", task.app, task.difficulty);
    println!("{}", format_report(&report));
    println!("{}", serde_json::to_string(&report).context("serializing report")?);
    Ok(EXIT_STOPPED)
}

/// Parse one `sim-step` command.
pub fn parse_step(text: &str, scene: &SceneGraph) -> Result<DeviceCommand, String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let num = |s: &str| s.parse::<u32>().map_err(|_| format!("{s:?} is not a coordinate"));
    match words.as_slice() {
        ["tap", x, y] => Ok(DeviceCommand::Tap { x: num(x)?, y: num(y)? }),
        ["back"] => Ok(DeviceCommand::KeyEvent { code: KEYCODE_BACK }),
        ["home"] => Ok(DeviceCommand::KeyEvent { code: KEYCODE_HOME }),
        ["key", code] => Ok(DeviceCommand::KeyEvent { code: num(code)? }),
        ["launch", id] => Ok(DeviceCommand::LaunchApp { identifier: id.to_string() }),
        ["scroll", "up"] => Ok(scroll_swipe(ScrollDirection::Up, scene.dims)),
        ["scroll", "down"] => Ok(scroll_swipe(ScrollDirection::Down, scene.dims)),
        ["swipe", x1, y1, x2, y2] => {
            Ok(DeviceCommand::Swipe { x1: num(x1)?, y1: num(y1)?, x2: num(x2)?, y2: num(y2)?, duration_ms: 500 })
        }
        ["type", ..] => {
            let rest = text.trim_start().strip_prefix("type").unwrap_or("").trim_start();
            Ok(DeviceCommand::InputText { text: rest.to_string() })
        }
        _ => Err(format!("unknown step {text:?}")),
    }
}

fn describe_state(state: &SimState) -> String {
    let mut out = format!("screen {}  stack [{}]", state.current, state.nav_stack.join(" > "));
    if let Some(f) = &state.focused {
        let _ = write!(out, "  focused {f}");
    }
    for (id, text) in &state.buffers {
        let _ = write!(out, "  {id}={text:?}");
    }
    out
}

pub fn cmd_sim_step(steps: &[String], render: Option<&Path>, options: &crate::Options) -> Result<i32, CliError> {
    let settings = load_settings(options)?;
    let Some(Target::Sim(path)) = &settings.target else {
        return Err(CliError::Config("sim-step needs --sim SCENE".into()));
    };
    let scene = load_scene(path)?;
    let commands = steps.iter().map(|s| parse_step(s, &scene)).collect::<Result<Vec<_>, _>>().map_err(CliError::Config)?;
    if let Some(dir) = render {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut state = SimState::initial(&scene);
    let save = |n: usize, state: &SimState| -> Result<(), CliError> {
        if let Some(dir) = render {
            let file = dir.join(format!("{n:03}.png"));
            std::fs::write(&file, encode_png(&sim_render_image(&scene, state)))
                .with_context(|| format!("writing {}", file.display()))?;
        }
        Ok(())
    };
    println!("start: {}", describe_state(&state));
    save(0, &state)?;
    for (n, (text, cmd)) in steps.iter().zip(&commands).enumerate() {
        let (next, effect) = sim_execute(&scene, &state, cmd);
        state = next;
        println!("{text}: {effect:?} -> {}", describe_state(&state));
        save(n + 1, &state)?;
    }
    Ok(EXIT_STOPPED)
}
