//! JSON-over-HTTP perception client and the response-shape validators shared
//! by every backend implementation.
//!
//! Endpoints (images are base64-encoded PNG):
//!
//! - `POST /ocr {image}` -> `{regions: [{text, box: [x0, y0, x1, y1], confidence}]}`
//! - `POST /detect {image, query}` -> `{boxes: [[x0, y0, x1, y1], ...]}`
//! - `POST /similarity {crops: [image, ...], text}` -> `{scores: [...]}`

use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{BackendError, BoundingBox, DetectorBackend, EmbedderBackend, IconCandidate, OcrBackend, TextRegion};
use crate::codec::png_base64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcrRequest {
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: String,
    pub query: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub crops: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRegion {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResponse {
    pub regions: Vec<WireRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<[i64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub scores: Vec<f64>,
}

impl OcrResponse {
    pub fn from_regions(regions: &[TextRegion]) -> Self {
        Self {
            regions: regions
                .iter()
                .map(|r| WireRegion {
                    text: r.content.clone(),
                    bbox: r.bbox.to_array().map(i64::from),
                    confidence: r.confidence,
                })
                .collect(),
        }
    }
}

impl DetectResponse {
    pub fn from_boxes(boxes: &[BoundingBox]) -> Self {
        Self { boxes: boxes.iter().map(|b| b.to_array().map(i64::from)).collect() }
    }
}

/// Where a response body departs from the contract.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ShapeViolation {
    pub path: String,
    pub message: String,
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> ShapeViolation {
    ShapeViolation { path: path.into(), message: message.into() }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Vec<Value>, ShapeViolation> {
    let obj = v.as_object().ok_or_else(|| violation("$", "expected an object"))?;
    obj.get(name)
        .ok_or_else(|| violation(format!("$.{name}"), "missing"))?
        .as_array()
        .ok_or_else(|| violation(format!("$.{name}"), "expected an array"))
}

fn check_box(v: &Value, path: &str) -> Result<(), ShapeViolation> {
    let arr = v.as_array().ok_or_else(|| violation(path, "expected [x0, y0, x1, y1]"))?;
    if arr.len() != 4 {
        return Err(violation(path, format!("expected 4 coordinates, got {}", arr.len())));
    }
    let mut c = [0i64; 4];
    for (i, item) in arr.iter().enumerate() {
        c[i] = item
            .as_i64()
            .ok_or_else(|| violation(format!("{path}[{i}]"), "expected an integer"))?;
    }
    if c.iter().any(|x| *x < 0) {
        return Err(violation(path, "negative coordinate"));
    }
    if c[0] >= c[2] || c[1] >= c[3] {
        return Err(violation(path, "need x0 < x1 and y0 < y1"));
    }
    Ok(())
}

pub fn validate_ocr_response(v: &Value) -> Result<(), ShapeViolation> {
    for (i, r) in field(v, "regions")?.iter().enumerate() {
        let p = format!("$.regions[{i}]");
        let obj = r.as_object().ok_or_else(|| violation(&p, "expected an object"))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| violation(format!("{p}.text"), "expected a string"))?;
        if text.trim().is_empty() {
            return Err(violation(format!("{p}.text"), "empty text"));
        }
        check_box(obj.get("box").unwrap_or(&Value::Null), &format!("{p}.box"))?;
        let conf = obj
            .get("confidence")
            .and_then(Value::as_f64)
            .ok_or_else(|| violation(format!("{p}.confidence"), "expected a number"))?;
        if !(0.0..=1.0).contains(&conf) {
            return Err(violation(format!("{p}.confidence"), "outside [0, 1]"));
        }
    }
    Ok(())
}

pub fn validate_detect_response(v: &Value) -> Result<(), ShapeViolation> {
    for (i, b) in field(v, "boxes")?.iter().enumerate() {
        check_box(b, &format!("$.boxes[{i}]"))?;
    }
    Ok(())
}

/// `expected` is the number of crops sent, when known.
pub fn validate_similarity_response(v: &Value, expected: Option<usize>) -> Result<(), ShapeViolation> {
    let scores = field(v, "scores")?;
    for (i, s) in scores.iter().enumerate() {
        let x = s
            .as_f64()
            .ok_or_else(|| violation(format!("$.scores[{i}]"), "expected a number"))?;
        if !x.is_finite() {
            return Err(violation(format!("$.scores[{i}]"), "not finite"));
        }
    }
    if let Some(n) = expected {
        if scores.len() != n {
            return Err(violation("$.scores", format!("expected {n} scores, got {}", scores.len())));
        }
    }
    Ok(())
}

/// Client for a perception service speaking the contract above.
#[derive(Debug, Clone)]
pub struct HttpPerception {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpPerception {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { base_url: base_url.trim_end_matches('/').to_string(), client })
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> Result<Value, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self.client.post(&url).json(body).send().map_err(map_reqwest)?;
        let status = resp.status();
        let text = resp.text().map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

pub(crate) fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn malformed(e: impl std::fmt::Display) -> BackendError {
    BackendError::Malformed(e.to_string())
}

impl OcrBackend for HttpPerception {
    fn recognize(&self, screen: &RgbImage) -> Result<Vec<TextRegion>, BackendError> {
        let v = self.post("/ocr", &OcrRequest { image: png_base64(screen) })?;
        validate_ocr_response(&v).map_err(malformed)?;
        let resp: OcrResponse = serde_json::from_value(v).map_err(malformed)?;
        Ok(resp
            .regions
            .into_iter()
            .filter_map(|r| {
                let bbox = BoundingBox::try_from(r.bbox).ok()?;
                Some(TextRegion { content: r.text, bbox, confidence: r.confidence })
            })
            .collect())
    }
}

impl DetectorBackend for HttpPerception {
    fn detect(&self, screen: &RgbImage, query: &str) -> Result<Vec<BoundingBox>, BackendError> {
        let v = self.post("/detect", &DetectRequest { image: png_base64(screen), query: query.to_string() })?;
        validate_detect_response(&v).map_err(malformed)?;
        let resp: DetectResponse = serde_json::from_value(v).map_err(malformed)?;
        Ok(resp.boxes.into_iter().filter_map(|b| BoundingBox::try_from(b).ok()).collect())
    }
}

impl EmbedderBackend for HttpPerception {
    fn score(&self, candidates: &[IconCandidate], text: &str) -> Result<Vec<f64>, BackendError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let crops = candidates.iter().map(|c| png_base64(&c.crop)).collect();
        let v = self.post("/similarity", &SimilarityRequest { crops, text: text.to_string() })?;
        validate_similarity_response(&v, Some(candidates.len())).map_err(malformed)?;
        let resp: SimilarityResponse = serde_json::from_value(v).map_err(malformed)?;
        Ok(resp.scores)
    }
}
