//! Command-line options, the JSON config file and their resolution.
//!
//! Every value resolves as flag, then config file, then built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use mobile_agent::agent::SessionConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_MODEL: &str = "gpt-4-vision-preview";
pub const DEFAULT_OUT: &str = "runs";

/// Options shared by every subcommand. All are optional so that the config
/// file can fill the gaps.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Options {
    /// Android device serial (adb).
    #[arg(long, value_name = "SERIAL", conflicts_with = "sim")]
    pub device: Option<String>,
    /// Simulator scene file.
    #[arg(long, value_name = "SCENE")]
    pub sim: Option<PathBuf>,
    /// Chat-completions base URL, or `scripted:PATH` for a fixture of replies.
    #[arg(long, value_name = "URL|scripted:PATH")]
    pub mllm: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Perception service base URL, or `oracle` (simulator only).
    #[arg(long, value_name = "URL|oracle")]
    pub perception: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub tasks: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub max_iterations: Option<usize>,
    /// Concurrent simulator sessions during `bench`.
    #[arg(long, value_name = "N")]
    pub parallel: Option<usize>,
    /// Manual step labels for live traces.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

/// Contents of `--config`. Field names follow the flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub device: Option<String>,
    pub sim: Option<PathBuf>,
    pub mllm: Option<String>,
    pub model: Option<String>,
    pub perception: Option<String>,
    pub tasks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_iterations: Option<usize>,
    pub parallel: Option<usize>,
    pub labels: Option<PathBuf>,
    /// Display name -> package for `Open App` on a physical device.
    pub apps: BTreeMap<String, String>,
    /// Agent loop settings; `max_iterations` above takes precedence.
    pub session: Option<SessionConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading config {}: {e}", path.display())))?;
        let mut file: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.sim, &mut file.tasks, &mut file.out, &mut file.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(m) = file.mllm.as_mut() {
            if let Some(rest) = m.strip_prefix("scripted:") {
                if Path::new(rest).is_relative() {
                    *m = format!("scripted:{}", base.join(rest).display());
                }
            }
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Device(String),
    Sim(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MllmSpec {
    Scripted(PathBuf),
    Remote(String),
}

impl MllmSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text.strip_prefix("scripted:") {
            Some("") => Err(CliError::Config("scripted: needs a fixture path".into())),
            Some(path) => Ok(MllmSpec::Scripted(PathBuf::from(path))),
            None if text.starts_with("http://") || text.starts_with("https://") => Ok(MllmSpec::Remote(text.into())),
            None => Err(CliError::Config(format!("--mllm {text:?} is neither a URL nor scripted:PATH"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PerceptionSpec {
    Oracle,
    Remote(String),
}

impl PerceptionSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.eq_ignore_ascii_case("oracle") {
            Ok(PerceptionSpec::Oracle)
        } else if text.starts_with("http://") || text.starts_with("https://") {
            Ok(PerceptionSpec::Remote(text.into()))
        } else {
            Err(CliError::Config(format!("--perception {text:?} is neither a URL nor oracle")))
        }
    }
}

/// Fully resolved settings. Device target and model backend stay optional
/// because `bench` can take them from each task.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub target: Option<Target>,
    pub mllm: Option<MllmSpec>,
    pub model: String,
    pub perception: Option<PerceptionSpec>,
    pub tasks: Option<PathBuf>,
    pub out: PathBuf,
    pub parallel: usize,
    pub labels: Option<PathBuf>,
    pub apps: Vec<(String, String)>,
    pub session: SessionConfig,
}

fn target_of(device: &Option<String>, sim: &Option<PathBuf>, source: &str) -> Result<Option<Target>, CliError> {
    match (device, sim) {
        (Some(_), Some(_)) => Err(CliError::Config(format!("{source} sets both device and sim; pick one"))),
        (Some(d), None) => Ok(Some(Target::Device(d.clone()))),
        (None, Some(s)) => Ok(Some(Target::Sim(s.clone()))),
        (None, None) => Ok(None),
    }
}

/// Merge flags over the config file over defaults.
pub fn resolve(flags: &Options, file: &FileConfig) -> Result<Settings, CliError> {
    let target = match target_of(&flags.device, &flags.sim, "the command line")? {
        Some(t) => Some(t),
        None => target_of(&file.device, &file.sim, "the config file")?,
    };
    let mllm = flags.mllm.as_ref().or(file.mllm.as_ref()).map(|m| MllmSpec::parse(m)).transpose()?;
    let perception =
        flags.perception.as_ref().or(file.perception.as_ref()).map(|p| PerceptionSpec::parse(p)).transpose()?;
    if matches!(target, Some(Target::Device(_))) && perception == Some(PerceptionSpec::Oracle) {
        return Err(CliError::Config("oracle perception needs a simulator target".into()));
    }
    let mut session = file.session.clone().unwrap_or_default();
    if let Some(n) = flags.max_iterations.or(file.max_iterations) {
        session.max_iterations = n;
    }
    session.validate().map_err(CliError::Config)?;
    let parallel = flags.parallel.or(file.parallel).unwrap_or(1);
    if parallel == 0 {
        return Err(CliError::Config("parallel must be at least 1".into()));
    }
    Ok(Settings {
        target,
        mllm,
        model: flags.model.clone().or_else(|| file.model.clone()).unwrap_or_else(|| DEFAULT_MODEL.into()),
        perception,
        tasks: flags.tasks.clone().or_else(|| file.tasks.clone()),
        out: flags.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        parallel,
        labels: flags.labels.clone().or_else(|| file.labels.clone()),
        apps: file.apps.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        session,
    })
}

/// Read `--config` when given and resolve.
pub fn load_settings(flags: &Options) -> Result<Settings, CliError> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    resolve(flags, &file)
}
