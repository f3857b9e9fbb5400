//! Image pre-processing: random shape (letterbox to a size drawn from a
//! set), random rotation, and saturation / exposure / hue scaling in HSV.

mod geometry;
mod hsv;
mod image;
mod pipeline;

pub use geometry::{
    draw_angle, letterbox, letterbox_geometry, random_rotate, random_shape_resize, resize, rotate,
    LetterboxGeometry,
};
pub use hsv::{adjust_hsv, hsv_to_rgb, hsv_to_rgb_pixel, rgb_to_hsv, rgb_to_hsv_pixel, HsvComponent, HsvImage};
pub use image::{decode_ppm, encode_ppm, read_ppm, write_ppm, Image};
pub use pipeline::{apply_method, make_pipeline, scale_set_for, AugmentConfig, AugmentedBatch, Augmenter, Method, DEFAULT_SCALE_SET};
