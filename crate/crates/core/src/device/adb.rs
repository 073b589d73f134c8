//! Android debug-bridge driver.
//!
//! Every command is a single `adb` subprocess:
//!
//! ```text
//! adb [-s SERIAL] shell screencap -p
//! adb [-s SERIAL] shell input tap X Y
//! adb [-s SERIAL] shell input swipe X1 Y1 X2 Y2 MS
//! adb [-s SERIAL] shell input text STR
//! adb [-s SERIAL] shell input keyevent CODE
//! adb [-s SERIAL] shell monkey -p PACKAGE -c android.intent.category.LAUNCHER 1
//! ```

use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::SystemTime;

use regex::Regex;
use tracing::debug;

use super::{Device, DeviceCommand, DeviceError, DeviceInfo, ScreenCapture};
use crate::codec::decode_png;
use crate::perception::Dims;

/// Environment variable consulted for the device serial when none is configured.
pub const SERIAL_ENV: &str = "ANDROID_SERIAL";

/// Runs a program with arguments and returns its raw output.
pub trait CommandRunner: Send {
    fn run(&self, program: &str, args: &[String]) -> std::io::Result<Output>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemRunner;

impl CommandRunner for SystemRunner {
    fn run(&self, program: &str, args: &[String]) -> std::io::Result<Output> {
        Command::new(program).args(args).output()
    }
}

/// Escape text for `input text`: spaces become `%s`, shell metacharacters
/// are backslash-escaped for the device shell.
pub fn escape_input_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            ' ' => out.push_str("%s"),
            '\\' | '\'' | '"' | '(' | ')' | '&' | '|' | ';' | '<' | '>' | '$' | '`' | '*' | '?' | '~'
            | '#' | '!' | '[' | ']' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

/// Arguments after `shell` for a command.
pub fn shell_args(cmd: &DeviceCommand) -> Vec<String> {
    let v = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match cmd {
        DeviceCommand::Tap { x, y } => v(&["input", "tap", &x.to_string(), &y.to_string()]),
        DeviceCommand::Swipe { x1, y1, x2, y2, duration_ms } => v(&[
            "input",
            "swipe",
            &x1.to_string(),
            &y1.to_string(),
            &x2.to_string(),
            &y2.to_string(),
            &duration_ms.to_string(),
        ]),
        DeviceCommand::InputText { text } => v(&["input", "text", &escape_input_text(text)]),
        DeviceCommand::KeyEvent { code } => v(&["input", "keyevent", &code.to_string()]),
        DeviceCommand::LaunchApp { identifier } => {
            v(&["monkey", "-p", identifier, "-c", "android.intent.category.LAUNCHER", "1"])
        }
        DeviceCommand::Capture => v(&["screencap", "-p"]),
    }
}

fn size_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^(Physical|Override) size:\s*(\d+)x(\d+)").expect("size regex"))
}

/// Parse `wm size` output; an override size wins over the physical one.
pub fn parse_wm_size(text: &str) -> Option<Dims> {
    let mut physical = None;
    let mut overridden = None;
    for caps in size_regex().captures_iter(text) {
        let d = Dims::new(caps[2].parse().ok()?, caps[3].parse().ok()?);
        if &caps[1] == "Override" {
            overridden = Some(d);
        } else {
            physical = Some(d);
        }
    }
    overridden.or(physical)
}

fn looks_disconnected(stderr: &str) -> bool {
    let s = stderr.to_lowercase();
    ["no devices", "device offline", "not found", "unauthorized", "no emulators"]
        .iter()
        .any(|needle| s.contains(needle))
}

pub struct AdbDevice<R: CommandRunner = SystemRunner> {
    program: String,
    serial: Option<String>,
    runner: R,
    apps: Vec<(String, String)>,
    dims: Dims,
    sequence: u64,
}

impl AdbDevice<SystemRunner> {
    /// Connect using the `adb` on `PATH`; the serial falls back to `ANDROID_SERIAL`.
    pub fn connect(serial: Option<String>, apps: Vec<(String, String)>) -> Result<Self, DeviceError> {
        let serial = serial.or_else(|| std::env::var(SERIAL_ENV).ok().filter(|s| !s.is_empty()));
        Self::with_runner("adb", serial, SystemRunner, apps)
    }
}

impl<R: CommandRunner> AdbDevice<R> {
    /// Build a driver and query the screen size.
    pub fn with_runner(
        program: &str,
        serial: Option<String>,
        runner: R,
        apps: Vec<(String, String)>,
    ) -> Result<Self, DeviceError> {
        let mut dev = Self { program: program.to_string(), serial, runner, apps, dims: Dims::new(0, 0), sequence: 0 };
        let out = dev.shell(&["wm".to_string(), "size".to_string()])?;
        let text = String::from_utf8_lossy(&out.stdout);
        dev.dims = parse_wm_size(&text)
            .ok_or_else(|| DeviceError::CommandFailed(format!("unexpected `wm size` output: {text}")))?;
        Ok(dev)
    }

    /// Full argument vector for `adb`.
    pub fn adb_args(&self, shell: &[String]) -> Vec<String> {
        let mut args = Vec::with_capacity(shell.len() + 3);
        if let Some(serial) = &self.serial {
            args.push("-s".to_string());
            args.push(serial.clone());
        }
        args.push("shell".to_string());
        args.extend_from_slice(shell);
        args
    }

    fn shell(&self, shell: &[String]) -> Result<Output, DeviceError> {
        let args = self.adb_args(shell);
        debug!(?args, "adb");
        let out = self.runner.run(&self.program, &args)?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
            return Err(if looks_disconnected(&stderr) {
                DeviceError::DeviceDisconnected(stderr)
            } else {
                DeviceError::CommandFailed(stderr)
            });
        }
        Ok(out)
    }

    /// Issue one command; for `Capture` the decoded screenshot is returned.
    pub fn adb_execute(&mut self, cmd: &DeviceCommand) -> Result<Option<image::RgbImage>, DeviceError> {
        let out = self.shell(&shell_args(cmd))?;
        if matches!(cmd, DeviceCommand::Capture) {
            let img = decode_png(&out.stdout).map_err(|e| DeviceError::CaptureDecodeError(e.to_string()))?;
            return Ok(Some(img));
        }
        Ok(None)
    }
}

impl<R: CommandRunner> Device for AdbDevice<R> {
    fn capture(&mut self) -> Result<ScreenCapture, DeviceError> {
        let image = self.adb_execute(&DeviceCommand::Capture)?.expect("capture returns an image");
        self.sequence += 1;
        Ok(ScreenCapture { image, sequence: self.sequence, captured_at: SystemTime::now() })
    }

    fn execute(&mut self, cmd: &DeviceCommand) -> Result<(), DeviceError> {
        self.adb_execute(cmd).map(|_| ())
    }

    fn dimensions(&self) -> Dims {
        self.dims
    }

    fn app_catalog(&self) -> Vec<(String, String)> {
        self.apps.clone()
    }

    fn describe(&self) -> DeviceInfo {
        DeviceInfo { kind: "adb".into(), name: self.serial.clone(), scene_digest: None }
    }
}
