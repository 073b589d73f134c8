//! Multimodal model backends: the request model, a scripted test double and a
//! chat-completions HTTP client.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use image::{imageops, RgbImage};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::codec::png_base64;

/// Environment variable holding the bearer token for remote backends.
pub const API_KEY_ENV: &str = "MOBILE_AGENT_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image(Arc<RgbImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, parts: vec![Part::Text(text.into())] }
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, Part::Image(_))).count()
    }

    pub fn joined_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum MllmError {
    #[error("scripted fixture exhausted after {0} responses")]
    FixtureExhausted(usize),
    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingApiKey,
    #[error("transport: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

/// A multimodal chat model. Requests are ordered message lists.
pub trait MllmBackend: Send {
    fn complete(&mut self, request: &[Message]) -> Result<String, MllmError>;
}

impl<B: MllmBackend + ?Sized> MllmBackend for Box<B> {
    fn complete(&mut self, request: &[Message]) -> Result<String, MllmError> {
        (**self).complete(request)
    }
}

/// Replays fixed responses in order, ignoring the request.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    turns: Vec<String>,
    cursor: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureFile {
    Wrapped { turns: Vec<String> },
    Bare(Vec<String>),
}

impl ScriptedBackend {
    pub fn new<I, S>(turns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { turns: turns.into_iter().map(Into::into).collect(), cursor: 0 }
    }

    /// Load `{"turns": [...]}` or a bare JSON array of strings.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MllmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MllmError::Fixture(format!("{}: {e}", path.display())))?;
        let file: FixtureFile =
            serde_json::from_str(&text).map_err(|e| MllmError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::new(match file {
            FixtureFile::Wrapped { turns } | FixtureFile::Bare(turns) => turns,
        }))
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.turns.len() - self.cursor
    }
}

impl MllmBackend for ScriptedBackend {
    fn complete(&mut self, _request: &[Message]) -> Result<String, MllmError> {
        let turn = self.turns.get(self.cursor).cloned().ok_or(MllmError::FixtureExhausted(self.turns.len()))?;
        self.cursor += 1;
        Ok(turn)
    }
}

/// What one request looked like, for inspection in tests and logs.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestSummary {
    pub messages: usize,
    pub images: usize,
    pub text: String,
}

/// Wraps a backend and records a summary of every request.
pub struct Recording<B> {
    inner: B,
    log: Arc<Mutex<Vec<RequestSummary>>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> (Self, Arc<Mutex<Vec<RequestSummary>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (Self { inner, log: log.clone() }, log)
    }
}

impl<B: MllmBackend> MllmBackend for Recording<B> {
    fn complete(&mut self, request: &[Message]) -> Result<String, MllmError> {
        self.log.lock().expect("request log").push(RequestSummary {
            messages: request.len(),
            images: request.iter().map(Message::image_count).sum(),
            text: request.iter().map(Message::joined_text).collect::<Vec<_>>().join("\n"),
        });
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone)]
pub struct HttpMllmConfig {
    pub base_url: String,
    pub model: String,
    pub max_tokens: u32,
    /// Longer image side is downscaled to at most this many pixels.
    pub max_image_side: u32,
    pub timeout: Duration,
}

impl HttpMllmConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            max_tokens: 1024,
            max_image_side: 1344,
            timeout: Duration::from_secs(120),
        }
    }
}

/// Chat-completions client: `POST {base_url}/chat/completions`.
pub struct HttpMllm {
    config: HttpMllmConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpMllm {
    /// Reads the API key from `MOBILE_AGENT_API_KEY`.
    pub fn from_env(config: HttpMllmConfig) -> Result<Self, MllmError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty()).ok_or(MllmError::MissingApiKey)?;
        Self::new(config, key)
    }

    pub fn new(config: HttpMllmConfig, api_key: String) -> Result<Self, MllmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| MllmError::Transport(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// JSON body for a request.
    pub fn request_body(&self, request: &[Message]) -> Value {
        let messages: Vec<Value> = request
            .iter()
            .map(|m| {
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text(t) => json!({"type": "text", "text": t}),
                        Part::Image(img) => {
                            let img = fit_image(img, self.config.max_image_side);
                            json!({
                                "type": "image_url",
                                "image_url": {"url": format!("data:image/png;base64,{}", png_base64(&img))}
                            })
                        }
                    })
                    .collect();
                json!({"role": m.role.as_str(), "content": content})
            })
            .collect();
        json!({"model": self.config.model, "messages": messages, "max_tokens": self.config.max_tokens})
    }
}

/// Downscale so the longer side is at most `max_side`, keeping the aspect ratio.
pub fn fit_image(img: &RgbImage, max_side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let longer = w.max(h);
    if max_side == 0 || longer <= max_side {
        return img.clone();
    }
    let scale = max_side as f64 / longer as f64;
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let nh = ((h as f64 * scale).round() as u32).max(1);
    imageops::resize(img, nw, nh, imageops::FilterType::Triangle)
}

/// Extract the assistant text from a chat-completions response.
pub fn response_text(v: &Value) -> Result<String, MllmError> {
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| MllmError::Malformed("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(MllmError::Malformed(format!("unexpected content {other}"))),
    }
}

impl MllmBackend for HttpMllm {
    fn complete(&mut self, request: &[Message]) -> Result<String, MllmError> {
        let body = self.request_body(request);
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(map_reqwest)?;
        let status = resp.status();
        let text = resp.text().map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(MllmError::Status { status: status.as_u16(), body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| MllmError::Malformed(e.to_string()))?;
        response_text(&v)
    }
}

fn map_reqwest(e: reqwest::Error) -> MllmError {
    if e.is_timeout() {
        MllmError::Timeout
    } else {
        MllmError::Transport(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_then_exhausts() {
        let mut b = ScriptedBackend::new(["a", "b"]);
        assert_eq!(b.complete(&[]).unwrap(), "a");
        assert_eq!(b.complete(&[]).unwrap(), "b");
        assert!(matches!(b.complete(&[]), Err(MllmError::FixtureExhausted(2))));
    }

    #[test]
    fn fixture_file_forms() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        std::fs::write(&p1, r#"{"turns": ["x"]}"#).unwrap();
        let p2 = dir.path().join("b.json");
        std::fs::write(&p2, r#"["y", "z"]"#).unwrap();
        assert_eq!(ScriptedBackend::load(&p1).unwrap().remaining(), 1);
        assert_eq!(ScriptedBackend::load(&p2).unwrap().remaining(), 2);
        assert!(ScriptedBackend::load(dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn body_shape() {
        let b = HttpMllm::new(HttpMllmConfig::new("http://h/v1/", "m"), "k".into()).unwrap();
        assert_eq!(b.endpoint(), "http://h/v1/chat/completions");
        let img = Arc::new(RgbImage::new(4, 4));
        let req = vec![
            Message::text(Role::System, "sys"),
            Message { role: Role::User, parts: vec![Part::Text("hi".into()), Part::Image(img)] },
        ];
        let v = b.request_body(&req);
        assert_eq!(v["model"], "m");
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"][1]["type"], "image_url");
        assert!(v["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(v["max_tokens"], 1024);
    }

    #[test]
    fn images_are_fitted() {
        let img = RgbImage::new(1080, 1920);
        assert_eq!(fit_image(&img, 960).dimensions(), (540, 960));
        assert_eq!(fit_image(&img, 4000).dimensions(), (1080, 1920));
    }

    #[test]
    fn response_text_forms() {
        let v = json!({"choices": [{"message": {"content": "Observation: x"}}]});
        assert_eq!(response_text(&v).unwrap(), "Observation: x");
        let v = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(response_text(&v).unwrap(), "ab");
        assert!(response_text(&json!({})).is_err());
    }
}
