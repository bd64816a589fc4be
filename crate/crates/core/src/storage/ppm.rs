//! Binary PPM (P6, maxval 255) images.

use std::fs;
use std::path::Path;

use super::StorageError;
use crate::augment::{Image, CHANNELS};

fn malformed(msg: impl Into<String>) -> StorageError {
    StorageError::MalformedImage(msg.into())
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], at: &mut usize) -> Result<&'a [u8], StorageError> {
    loop {
        while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if *at < bytes.len() && bytes[*at] == b'#' {
            while *at < bytes.len() && bytes[*at] != b'\n' {
                *at += 1;
            }
            continue;
        }
        break;
    }
    let start = *at;
    while *at < bytes.len() && !bytes[*at].is_ascii_whitespace() && bytes[*at] != b'#' {
        *at += 1;
    }
    if start == *at {
        return Err(malformed("header ends early"));
    }
    Ok(&bytes[start..*at])
}

fn number(bytes: &[u8], at: &mut usize, what: &str) -> Result<usize, StorageError> {
    let token = next_token(bytes, at)?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| malformed(format!("bad {what}")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, StorageError> {
    let mut at = 0;
    let magic = next_token(bytes, &mut at)?;
    if magic != b"P6" {
        return Err(StorageError::UnsupportedImage(
            String::from_utf8_lossy(&magic[..magic.len().min(8)]).into_owned(),
        ));
    }
    let width = number(bytes, &mut at, "width")?;
    let height = number(bytes, &mut at, "height")?;
    let maxval = number(bytes, &mut at, "maxval")?;
    if maxval != 255 {
        return Err(StorageError::UnsupportedImage(format!("P6 maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero extent"));
    }
    // exactly one whitespace byte separates the header from the raster
    if at >= bytes.len() || !bytes[at].is_ascii_whitespace() {
        return Err(malformed("missing separator after maxval"));
    }
    at += 1;
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(CHANNELS))
        .ok_or_else(|| malformed("extent overflow"))?;
    let raster = &bytes[at..];
    if raster.len() != expected {
        return Err(malformed(format!("raster has {} bytes, expected {expected}", raster.len())));
    }
    let pixels = raster.iter().map(|&b| f32::from(b) / 255.0).collect();
    Image::new(height, width, pixels).map_err(|e| malformed(e.to_string()))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_image(path: &Path) -> Result<Image, StorageError> {
    let bytes = fs::read(path).map_err(|e| StorageError::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_image(img: &Image, path: &Path) -> Result<(), StorageError> {
    fs::write(path, encode_ppm(img)).map_err(|e| StorageError::io(path, e))
}
