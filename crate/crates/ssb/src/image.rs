//! Binary PPM (P6) and PGM (P5) images, 8 bits per sample.

use std::path::Path;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

fn tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        out.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    (i < bytes.len()).then_some((out, i + 1))
}

impl Rgb {
    pub fn parse_ppm(bytes: &[u8]) -> AppResult<Self> {
        let bad = |m: &str| AppError::Data(format!("PPM: {m}"));
        let (t, start) = tokens(bytes, 4).ok_or_else(|| bad("incomplete header"))?;
        if t[0] != "P6" {
            return Err(bad(&format!("expected magic P6, found {}", t[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad header number `{s}`")));
        let (width, height, max) = (num(&t[1])?, num(&t[2])?, num(&t[3])?);
        if width == 0 || height == 0 || max != 255 {
            return Err(bad("only non-empty 8-bit (maxval 255) images are supported"));
        }
        let need = width * height * 3;
        let data = bytes.get(start..start + need).ok_or_else(|| {
            bad(&format!("raster truncated: {} of {need} bytes", bytes.len().saturating_sub(start)))
        })?;
        Ok(Rgb {
            width,
            height,
            data: data.to_vec(),
        })
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::parse_ppm(&bytes).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

/// Rounds and clamps to `0..=255`.
pub fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
