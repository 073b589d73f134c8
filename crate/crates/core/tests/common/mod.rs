#![allow(dead_code)]

pub mod actions;
pub mod gen;

use std::path::PathBuf;

use mobile_agent::agent::{run_instruction, ScriptedBackend, SessionConfig, Trace};
use mobile_agent::eval::{completion_rate, load_tasks, ReportEntry, TaskReport, TaskSpec};
use mobile_agent::score::{exact_decimal, Exact, Score};
use mobile_agent::simulator::{SceneGraph, SimDevice};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scene(name: &str) -> SceneGraph {
    SceneGraph::load(repo_root().join("scenes").join(name)).expect("bundled scene loads")
}

pub fn fixture(name: &str) -> ScriptedBackend {
    ScriptedBackend::load(repo_root().join("fixtures").join(name)).expect("bundled fixture loads")
}

pub fn sim_tasks() -> Vec<TaskSpec> {
    load_tasks(repo_root().join("tasks/sim_tasks.json")).expect("bundled sim tasks load")
}

pub fn sim_task(app: &str) -> TaskSpec {
    sim_tasks().into_iter().find(|t| t.app == app).expect("task exists")
}

/// Run `fixture` on `scene` with oracle perception.
pub fn run_scripted(scene_file: &str, fixture_file: &str, config: &SessionConfig) -> (Trace, SimDevice, ScriptedBackend) {
    let sc = scene(scene_file);
    let instruction = sim_tasks()
        .into_iter()
        .find(|t| t.scene.as_ref().is_some_and(|p| p.ends_with(scene_file)))
        .map(|t| t.instruction)
        .unwrap_or_else(|| "Do the task.".into());
    let mut device = SimDevice::new(sc);
    let perception = device.oracle().into_backends();
    let mut mllm = fixture(fixture_file);
    let trace = run_instruction(&instruction, &mut device, &perception, &mut mllm, config);
    (trace, device, mllm)
}

/// Per-task rows of the published Mobile-Eval results:
/// (app, difficulty, success, process score, agent steps, human steps, completed human steps).
pub const TABLE2_ROWS: &[(&str, u8, bool, &str, u32, u32, usize)] = &[
    ("Alibaba.com", 1, true, "0.75", 4, 3, 3),
    ("Amazon Music", 1, false, "0.44", 9, 5, 4),
    ("Chrome", 1, true, "1.00", 4, 4, 4),
    ("Gmail", 1, true, "1.00", 4, 4, 4),
    ("Google Maps", 1, true, "1.00", 5, 5, 5),
    ("Google Play", 1, true, "1.00", 3, 3, 3),
    ("Notes", 1, true, "0.57", 7, 4, 4),
    ("Settings", 1, true, "1.00", 4, 4, 4),
    ("TikTok", 1, true, "1.00", 4, 4, 4),
    ("YouTube", 1, true, "1.00", 4, 4, 4),
    ("Multi-App", 1, true, "1.00", 6, 6, 6),
    ("Alibaba.com", 2, false, "0.39", 13, 8, 5),
    ("Amazon Music", 2, true, "0.75", 8, 6, 6),
    ("Chrome", 2, true, "0.8", 5, 4, 4),
    ("Gmail", 2, false, "0.56", 9, 8, 3),
    ("Google Maps", 2, true, "1.00", 6, 6, 6),
    ("Google Play", 2, true, "0.50", 10, 4, 4),
    ("Notes", 2, true, "0.67", 6, 4, 4),
    ("Settings", 2, true, "1.00", 4, 4, 4),
    ("TikTok", 2, true, "1.00", 10, 10, 10),
    ("YouTube", 2, true, "1.00", 9, 9, 9),
    ("Multi-App", 2, true, "1.00", 6, 6, 6),
    ("Alibaba.com", 3, true, "0.9", 10, 9, 9),
    ("Amazon Music", 3, false, "0.50", 12, 3, 2),
    ("Chrome", 3, true, "0.43", 8, 5, 5),
    ("Gmail", 3, false, "0.56", 9, 8, 3),
    ("Google Maps", 3, true, "1.00", 6, 6, 6),
    ("Google Play", 3, true, "1.00", 3, 3, 3),
    ("Notes", 3, true, "1.00", 5, 5, 5),
    ("Settings", 3, true, "1.00", 5, 5, 5),
    ("TikTok", 3, true, "1.00", 7, 7, 7),
    ("YouTube", 3, true, "1.00", 7, 7, 7),
    ("Multi-App", 3, true, "1.00", 10, 10, 10),
];

/// Convert an exact rational into any metric scalar.
pub fn from_exact<S: Score>(v: Exact) -> S {
    S::from_i64(*v.numer()).unwrap() / S::from_i64(*v.denom()).unwrap()
}

pub fn table2_entries<S: Score>() -> Vec<ReportEntry<S>> {
    TABLE2_ROWS
        .iter()
        .map(|&(app, difficulty, su, ps, agent, human, completed)| ReportEntry {
            app: app.into(),
            difficulty,
            report: TaskReport::new(
                su,
                Some(from_exact(exact_decimal(ps).unwrap())),
                agent,
                human,
                Some(completion_rate(completed, human)),
            ),
        })
        .collect()
}
