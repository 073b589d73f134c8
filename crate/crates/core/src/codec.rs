//! PNG / base64 helpers and content hashing for captures.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}

pub fn png_base64(img: &RgbImage) -> String {
    STANDARD.encode(encode_png(img))
}

pub fn png_from_base64(text: &str) -> Result<RgbImage, String> {
    let bytes = STANDARD.decode(text.trim()).map_err(|e| e.to_string())?;
    decode_png(&bytes).map_err(|e| e.to_string())
}

/// Hex SHA-256 over dimensions and raw RGB pixels; independent of PNG encoder settings.
pub fn pixel_hash(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hex(&hasher.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
