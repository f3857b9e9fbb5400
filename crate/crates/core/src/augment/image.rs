//! RGB images with values in `[0, 1]` and binary PPM (P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::AugmentError;

/// Interleaved RGB, row-major, values clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn black(height: usize, width: usize) -> Result<Self, AugmentError> {
        if height == 0 || width == 0 {
            return Err(AugmentError::EmptyImage);
        }
        Ok(Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        })
    }

    /// Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn from_rgb(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self, AugmentError> {
        if height == 0 || width == 0 {
            return Err(AugmentError::EmptyImage);
        }
        if data.len() != height * width * 3 {
            return Err(AugmentError::Ppm(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        for v in &mut data {
            *v = clamp01(*v);
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (k, v) in rgb.into_iter().enumerate() {
            self.data[i + k] = clamp01(v);
        }
    }

    /// Planar `3 x H x W` copy, the layout tensors use.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = px[c];
            }
        }
        out
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// 8-bit binary PPM.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v * 255.0).round() as u8));
    out
}

fn ppm_err(msg: impl Into<String>) -> AugmentError {
    AugmentError::Ppm(msg.into())
}

/// Reads a binary PPM (P6) with maxval up to 65535. Header comments are
/// skipped. Images larger than 2^26 pixels are rejected.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image, AugmentError> {
    let mut pos = 0usize;
    let mut token = || -> Result<&[u8], AugmentError> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(ppm_err("unexpected end of header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P6" {
        return Err(ppm_err("not a binary PPM (missing P6 magic)"));
    }
    let mut number = |name: &str| -> Result<usize, AugmentError> {
        let t = token()?;
        if t.is_empty() || t.len() > 9 || !t.iter().all(u8::is_ascii_digit) {
            return Err(ppm_err(format!("bad {name}")));
        }
        Ok(std::str::from_utf8(t).unwrap().parse().unwrap())
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(AugmentError::EmptyImage);
    }
    if width.saturating_mul(height) > 1 << 26 {
        return Err(ppm_err("image too large"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ppm_err(format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ppm_err("missing whitespace before raster")),
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = width * height * 3;
    let raster = bytes
        .get(pos..pos + n * bps)
        .ok_or_else(|| ppm_err(format!("raster truncated: need {} bytes", n * bps)))?;
    // Division rather than a reciprocal multiply, so k/255 round-trips.
    let max = maxval as f32;
    let data = if bps == 1 {
        raster.iter().map(|&b| b as f32 / max).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / max)
            .collect()
    };
    Image::from_rgb(height, width, data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image, AugmentError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_ppm(&bytes)
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<(), AugmentError> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    })
}
