//! Command-line front end for the mobile agent: run one instruction, run a
//! benchmark, score a saved trace, or poke a simulator scene by hand.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{load_settings, resolve, FileConfig, MllmSpec, Options, PerceptionSpec, Settings, Target};

pub const EXIT_STOPPED: i32 = 0;
pub const EXIT_ABORTED: i32 = 1;
pub const EXIT_EXHAUSTED: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file, or missing credentials.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_ABORTED,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mobile-agent", version, about = "Screenshot-grounded mobile device agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Carry out one instruction on a device or simulator.
    Run {
        instruction: String,
        #[command(flatten)]
        options: Options,
    },
    /// Run every task in a task file and write a report.
    Bench {
        #[command(flatten)]
        options: Options,
    },
    /// Score a saved trace against its task.
    Score {
        /// Trace directory or trace.jsonl file.
        trace: PathBuf,
        /// Task index in the task file; by default the task is found by instruction.
        #[arg(long)]
        task: Option<usize>,
        #[command(flatten)]
        options: Options,
    },
    /// Apply device commands to a simulator scene and print the state.
    SimStep {
        /// Commands such as `tap 270 480`, `type hello`, `back`, `home`,
        /// `launch notes_home`, `swipe up`.
        steps: Vec<String>,
        /// Write a PNG of the screen after each command into this directory.
        #[arg(long, value_name = "DIR")]
        render: Option<PathBuf>,
        #[command(flatten)]
        options: Options,
    },
}

/// Parse `args` and run. Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_STOPPED };
        }
    };
    let result = match cli.command {
        Command::Run { instruction, options } => commands::cmd_run(&instruction, &options),
        Command::Bench { options } => commands::cmd_bench(&options),
        Command::Score { trace, task, options } => commands::cmd_score(&trace, task, &options),
        Command::SimStep { steps, render, options } => commands::cmd_sim_step(&steps, render.as_deref(), &options),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
