//! Binary (`P6`) and ASCII (`P3`) PPM images.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("PPM format error: {0}")]
    Format(String),
}

fn fmt_err(msg: impl Into<String>) -> PpmError {
    PpmError::Format(msg.into())
}

/// 8-bit RGB raster, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> Option<[u8; 3]> {
        (col < self.width && row < self.height).then(|| self.pixels[row * self.width + col])
    }

    /// Color of the pixel whose square contains the continuous image
    /// position `(u, v)`; pixel `(0, 0)` covers `[-0.5, 0.5)²`.
    pub fn sample(&self, u: f64, v: f64) -> Option<[u8; 3]> {
        let (c, r) = ((u + 0.5).floor(), (v + 0.5).floor());
        if c < 0.0 || r < 0.0 || !c.is_finite() || !r.is_finite() {
            return None;
        }
        self.get(c as usize, r as usize)
    }

    pub fn encode_p6(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(format!("expected {what} at byte {start}")))
    }
}

fn scale(v: usize, maxval: usize) -> Result<u8, PpmError> {
    if v > maxval {
        return Err(fmt_err(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(((v * 255 + maxval / 2) / maxval) as u8)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, PpmError> {
    let binary = match bytes.get(..2) {
        Some(b"P6") => true,
        Some(b"P3") => false,
        _ => return Err(fmt_err("not a PPM image (magic must be P6 or P3)")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(fmt_err("image has zero size"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(fmt_err(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| fmt_err("image dimensions overflow"))?;
    let mut samples = Vec::with_capacity(n * 3);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(fmt_err("missing whitespace after maxval"));
        }
        let raster = &bytes[cur.pos + 1..];
        let depth = if maxval < 256 { 1 } else { 2 };
        if raster.len() < n * 3 * depth {
            return Err(fmt_err(format!(
                "raster has {} bytes, expected {}",
                raster.len(),
                n * 3 * depth
            )));
        }
        for k in 0..n * 3 {
            let v = if depth == 1 {
                raster[k] as usize
            } else {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as usize
            };
            samples.push(scale(v, maxval)?);
        }
    } else {
        for _ in 0..n * 3 {
            samples.push(scale(cur.number("sample")?, maxval)?);
        }
    }
    let pixels = samples.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(RgbImage { width, height, pixels })
}

pub fn load_ppm(path: &Path) -> Result<RgbImage, PpmError> {
    let bytes = std::fs::read(path).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&bytes)
}
