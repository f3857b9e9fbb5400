//! Rotation, bilinear resize and letterboxing.

use rand::Rng;

use super::image::Image;
use crate::error::AugmentError;

fn fetch(img: &Image, y: isize, x: isize) -> [f32; 3] {
    if y < 0 || x < 0 || y as usize >= img.height() || x as usize >= img.width() {
        [0.0; 3]
    } else {
        img.pixel(y as usize, x as usize)
    }
}

/// Bilinear sample at fractional `(y, x)`; pixels outside the frame are black.
fn sample(img: &Image, y: f64, x: f64) -> [f32; 3] {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let p00 = fetch(img, y0, x0);
    let p01 = fetch(img, y0, x0 + 1);
    let p10 = fetch(img, y0 + 1, x0);
    let p11 = fetch(img, y0 + 1, x0 + 1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p01[c] * fx;
        let bottom = p10[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Rotates by `degrees` (counter-clockwise) about the image center.
pub fn rotate(img: &Image, degrees: f32) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = (degrees as f64).to_radians().sin_cos();
    let mut out = Image::black(h, w).expect("same extents as a valid image");
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // Inverse map: rotate the destination offset by -angle.
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            out.set_pixel(y, x, sample(img, sy, sx));
        }
    }
    out
}

/// Uniform draw from `[-range, +range]` degrees.
pub fn draw_angle<R: Rng + ?Sized>(range_deg: f32, rng: &mut R) -> Result<f32, AugmentError> {
    if !(range_deg >= 0.0) || !range_deg.is_finite() {
        return Err(AugmentError::NegativeAngle(range_deg));
    }
    if range_deg == 0.0 {
        return Ok(0.0);
    }
    Ok(rng.random_range(-range_deg..=range_deg))
}

pub fn random_rotate<R: Rng + ?Sized>(img: &Image, range_deg: f32, rng: &mut R) -> Result<Image, AugmentError> {
    Ok(rotate(img, draw_angle(range_deg, rng)?))
}

/// Bilinear resize with half-pixel centers; edge pixels are replicated.
pub fn resize(img: &Image, height: usize, width: usize) -> Result<Image, AugmentError> {
    let mut out = Image::black(height, width)?;
    if height == img.height() && width == img.width() {
        return Ok(img.clone());
    }
    let sy = img.height() as f64 / height as f64;
    let sx = img.width() as f64 / width as f64;
    let max_y = (img.height() - 1) as f64;
    let max_x = (img.width() - 1) as f64;
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            // Clamped coordinates never reach outside, so no black bleed.
            out.set_pixel(y, x, sample(img, fy, fx));
        }
    }
    Ok(out)
}

/// Placement of the resized content inside a letterboxed square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LetterboxGeometry {
    pub top: usize,
    pub left: usize,
    pub content_height: usize,
    pub content_width: usize,
}

pub fn letterbox_geometry(height: usize, width: usize, side: usize) -> LetterboxGeometry {
    let scale = (side as f64 / width as f64).min(side as f64 / height as f64);
    let content_height = ((height as f64 * scale).round() as usize).clamp(1, side);
    let content_width = ((width as f64 * scale).round() as usize).clamp(1, side);
    LetterboxGeometry {
        top: (side - content_height) / 2,
        left: (side - content_width) / 2,
        content_height,
        content_width,
    }
}

/// Aspect-preserving resize into a `side x side` canvas with black bars.
pub fn letterbox(img: &Image, side: usize) -> Result<Image, AugmentError> {
    if side == 0 {
        return Err(AugmentError::BadScaleSet);
    }
    let g = letterbox_geometry(img.height(), img.width(), side);
    let content = resize(img, g.content_height, g.content_width)?;
    let mut out = Image::black(side, side)?;
    for y in 0..g.content_height {
        for x in 0..g.content_width {
            out.set_pixel(g.top + y, g.left + x, content.pixel(y, x));
        }
    }
    Ok(out)
}

/// Draws one side length from `sizes` and letterboxes every image to it.
pub fn random_shape_resize<R: Rng + ?Sized>(
    batch: &[Image],
    sizes: &[usize],
    rng: &mut R,
) -> Result<(Vec<Image>, usize), AugmentError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(AugmentError::BadScaleSet);
    }
    let side = sizes[rng.random_range(0..sizes.len())];
    let out = batch.iter().map(|img| letterbox(img, side)).collect::<Result<_, _>>()?;
    Ok((out, side))
}
