use std::path::Path;

use super::Image;
use crate::{Error, Result};

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                    pos += 1;
                }
            }
            _ => return pos,
        }
    }
}

fn header_field(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let start = skip_space_and_comments(bytes, *pos);
    let mut end = start;
    while bytes.get(end).is_some_and(u8::is_ascii_digit) {
        end += 1;
    }
    if end == start {
        return Err(Error::Image(format!("header: missing {what}")));
    }
    *pos = end;
    std::str::from_utf8(&bytes[start..end])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("header: {what} out of range")))
}

/// Parses binary P5 (gray) or P6 (RGB) data with maxval 255. When
/// `channels` is given, the file type must match it.
pub fn decode_pnm(bytes: &[u8], channels: Option<usize>) -> Result<Image> {
    let found = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Image("not a binary PGM/PPM (expected P5 or P6)".into())),
    };
    if let Some(c) = channels.filter(|&c| c != found) {
        return Err(Error::Image(format!(
            "file has {found} channel(s) ({}), {c} requested",
            if found == 1 { "P5" } else { "P6" }
        )));
    }
    let mut pos = 2;
    let width = header_field(bytes, &mut pos, "width")?;
    let height = header_field(bytes, &mut pos, "height")?;
    let maxval = header_field(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("maxval {maxval} unsupported, expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("header: expected whitespace after maxval".into()));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(found))
        .ok_or_else(|| Error::Image("dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() != n {
        return Err(Error::Image(format!("raster has {} bytes, expected {n}", raster.len())));
    }
    let plane = width * height;
    let mut samples = vec![0.0; n];
    for (i, &b) in raster.iter().enumerate() {
        samples[(i % found) * plane + i / found] = b as f64 / 255.0;
    }
    Image::new(width, height, found, samples)
}

/// Binary P5/P6 bytes; samples are quantized as `round(255·x)`.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let plane = img.width() * img.height();
    for i in 0..plane {
        for c in 0..img.channels() {
            out.push((img.samples()[c * plane + i] * 255.0).round() as u8);
        }
    }
    out
}

pub fn read_pnm(path: impl AsRef<Path>, channels: Option<usize>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, channels).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_pnm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}
