//! Hexcone RGB <-> HSV conversion and the three HSV adjustments.
//!
//! Hue lives in `[0, 1)` and wraps; saturation and value in `[0, 1]`.

use super::image::{clamp01, Image};
use crate::error::AugmentError;

#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub height: usize,
    pub width: usize,
    pub h: Vec<f32>,
    pub s: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsvComponent {
    /// Scales V.
    Exposure,
    /// Scales S.
    Saturation,
    /// Scales H, modulo 1.
    Hue,
}

pub fn rgb_to_hsv_pixel([r, g, b]: [f32; 3]) -> [f32; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else {
        let sector = if max == r {
            ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            (b - r) / delta + 2.0
        } else {
            (r - g) / delta + 4.0
        };
        wrap_unit(sector / 6.0)
    };
    [h as f32, s as f32, max as f32]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f32; 3]) -> [f32; 3] {
    let (h, s, v) = (wrap_unit(h as f64), s as f64, v as f64);
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

fn wrap_unit(h: f64) -> f64 {
    let w = h.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn rgb_to_hsv(img: &Image) -> HsvImage {
    let n = img.height() * img.width();
    let mut out = HsvImage {
        height: img.height(),
        width: img.width(),
        h: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for px in img.data().chunks_exact(3) {
        let [h, s, v] = rgb_to_hsv_pixel([px[0], px[1], px[2]]);
        out.h.push(h);
        out.s.push(s);
        out.v.push(v);
    }
    out
}

pub fn hsv_to_rgb(hsv: &HsvImage) -> Image {
    let mut data = Vec::with_capacity(hsv.h.len() * 3);
    for i in 0..hsv.h.len() {
        data.extend(hsv_to_rgb_pixel([hsv.h[i], hsv.s[i], hsv.v[i]]));
    }
    Image::from_rgb(hsv.height, hsv.width, data).expect("extents carried over from a valid image")
}

impl HsvImage {
    /// Multiplies one component by `factor`, clamping S and V to `[0, 1]`
    /// and wrapping H. The other two planes are untouched.
    pub fn scale(&mut self, component: HsvComponent, factor: f32) -> Result<(), AugmentError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(AugmentError::NonPositiveFactor(factor));
        }
        match component {
            HsvComponent::Exposure => self.v.iter_mut().for_each(|v| *v = clamp01(*v * factor)),
            HsvComponent::Saturation => self.s.iter_mut().for_each(|s| *s = clamp01(*s * factor)),
            HsvComponent::Hue => self
                .h
                .iter_mut()
                .for_each(|h| *h = wrap_unit(*h as f64 * factor as f64) as f32),
        }
        Ok(())
    }
}

pub fn adjust_hsv(img: &Image, component: HsvComponent, factor: f32) -> Result<Image, AugmentError> {
    let mut hsv = rgb_to_hsv(img);
    hsv.scale(component, factor)?;
    Ok(hsv_to_rgb(&hsv))
}
