use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{draw_angle, random_shape_resize, rotate};
use super::hsv::{rgb_to_hsv, hsv_to_rgb, HsvComponent};
use super::image::Image;
use crate::error::AugmentError;
use crate::rng::stream;

pub const DEFAULT_SCALE_SET: [usize; 7] = [320, 352, 384, 416, 448, 480, 512];

/// The default set rescaled for a `side`-pixel model input, keeping the
/// same proportions to its 416-pixel centre.
pub fn scale_set_for(side: usize) -> Vec<usize> {
    let mut out: Vec<usize> = DEFAULT_SCALE_SET
        .iter()
        .map(|&s| ((s * side) as f64 / 416.0).round().max(1.0) as usize)
        .collect();
    out.dedup();
    out
}

/// The five methods, in the order the pipeline applies them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Shape,
    Angle,
    Saturation,
    Exposure,
    Hue,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Shape,
        Method::Angle,
        Method::Saturation,
        Method::Exposure,
        Method::Hue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Shape => "shape",
            Method::Angle => "angle",
            Method::Saturation => "saturation",
            Method::Exposure => "exposure",
            Method::Hue => "hue",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub exposure_factor: f32,
    pub saturation_factor: f32,
    pub hue_factor: f32,
    pub angle_range_deg: f32,
    pub scale_set: Vec<usize>,
    pub enabled: Vec<Method>,
    /// Chance that each enabled colour method touches a given image.
    /// At 1.0 every image gets every enabled adjustment.
    pub color_probability: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            exposure_factor: 1.5,
            saturation_factor: 1.5,
            hue_factor: 0.1,
            angle_range_deg: 5.0,
            scale_set: DEFAULT_SCALE_SET.to_vec(),
            enabled: Vec::new(),
            color_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn with_methods(methods: &[Method]) -> Self {
        Self {
            enabled: methods.to_vec(),
            ..Self::default()
        }
    }

    pub fn is_enabled(&self, m: Method) -> bool {
        self.enabled.contains(&m)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for f in [self.exposure_factor, self.saturation_factor, self.hue_factor] {
            if !(f > 0.0) || !f.is_finite() {
                return Err(AugmentError::NonPositiveFactor(f));
            }
        }
        if !(self.angle_range_deg >= 0.0) || !self.angle_range_deg.is_finite() {
            return Err(AugmentError::NegativeAngle(self.angle_range_deg));
        }
        if self.scale_set.is_empty() || self.scale_set.contains(&0) {
            return Err(AugmentError::BadScaleSet);
        }
        if !(0.0..=1.0).contains(&self.color_probability) {
            return Err(AugmentError::BadProbability(self.color_probability));
        }
        Ok(())
    }

    fn component(&self, m: Method) -> Option<(HsvComponent, f32)> {
        match m {
            Method::Saturation => Some((HsvComponent::Saturation, self.saturation_factor)),
            Method::Exposure => Some((HsvComponent::Exposure, self.exposure_factor)),
            Method::Hue => Some((HsvComponent::Hue, self.hue_factor)),
            _ => None,
        }
    }
}

/// Applies the enabled methods in the order
/// shape -> rotate -> saturation -> exposure -> hue.
///
/// Every random draw comes from a stream derived from
/// `(seed, batch_index)` for the batch-wide size and
/// `(seed, batch_index, image_index)` per image, so output depends only on
/// the config and the inputs.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
}

/// Result of one batch: the images and the side length drawn for the
/// batch when random shape was enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub images: Vec<Image>,
    pub side: Option<usize>,
}

impl Augmenter {
    pub fn new(config: AugmentConfig) -> Result<Self, AugmentError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    pub fn apply_batch(&self, batch: &[Image], batch_index: u64) -> Result<AugmentedBatch, AugmentError> {
        let cfg = &self.config;
        let (resized, side) = if cfg.is_enabled(Method::Shape) {
            let mut rng = stream(cfg.seed, &[batch_index]);
            let (imgs, side) = random_shape_resize(batch, &cfg.scale_set, &mut rng)?;
            (imgs, Some(side))
        } else {
            (batch.to_vec(), None)
        };
        let images = resized
            .into_par_iter()
            .enumerate()
            .map(|(i, img)| self.apply_image(img, batch_index, i as u64))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AugmentedBatch { images, side })
    }

    fn apply_image(&self, mut img: Image, batch_index: u64, index: u64) -> Result<Image, AugmentError> {
        let cfg = &self.config;
        let mut rng = stream(cfg.seed, &[batch_index, index]);
        if cfg.is_enabled(Method::Angle) {
            img = rotate(&img, draw_angle(cfg.angle_range_deg, &mut rng)?);
        }
        let mut hsv = None;
        for m in [Method::Saturation, Method::Exposure, Method::Hue] {
            if !cfg.is_enabled(m) {
                continue;
            }
            // Draw even when the probability is 1 so streams stay aligned.
            if rng.random::<f64>() >= cfg.color_probability {
                continue;
            }
            let (component, factor) = cfg.component(m).expect("colour method");
            hsv.get_or_insert_with(|| rgb_to_hsv(&img)).scale(component, factor)?;
        }
        Ok(match hsv {
            Some(h) => hsv_to_rgb(&h),
            None => img,
        })
    }
}

pub fn make_pipeline(config: AugmentConfig) -> Result<Augmenter, AugmentError> {
    Augmenter::new(config)
}

/// Applies one method unconditionally, for previews. Random methods draw
/// from `rng`; shape draws one side from the configured set.
pub fn apply_method<R: Rng + ?Sized>(
    config: &AugmentConfig,
    method: Method,
    img: &Image,
    rng: &mut R,
) -> Result<Image, AugmentError> {
    config.validate()?;
    match method {
        Method::Shape => Ok(random_shape_resize(std::slice::from_ref(img), &config.scale_set, rng)?
            .0
            .remove(0)),
        Method::Angle => Ok(rotate(img, draw_angle(config.angle_range_deg, rng)?)),
        m => {
            let (component, factor) = config.component(m).expect("colour method");
            super::hsv::adjust_hsv(img, component, factor)
        }
    }
}
