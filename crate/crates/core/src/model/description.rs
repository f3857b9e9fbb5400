//! Model descriptions: a TOML layer list turned into an initialized graph.
//!
//! ```toml
//! input = [3, 24, 24]
//! classes = 10
//! seed = 7
//!
//! [[layers]]
//! kind = "cbr"      # conv + batchnorm + relu
//! out = 16
//! kernel = 3
//! padding = 1
//!
//! [[layers]]
//! kind = "maxpool"
//! size = 2
//! ```

use serde::Deserialize;

use super::{InputShape, Layer, ModelGraph, DEFAULT_BN_SCALE, MAX_ELEMENTS};
use crate::error::ModelError;
use crate::layers::{BnParams, ConvParams, LinearParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelDescription {
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
    pub bn_init_scale: Option<f32>,
    pub layers: Vec<LayerDescription>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerDescription {
    pub kind: String,
    /// Declared input channels; checked against the chain when present.
    #[serde(rename = "in")]
    pub in_channels: Option<usize>,
    #[serde(rename = "out")]
    pub out_channels: Option<usize>,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
    pub padding: Option<usize>,
    pub size: Option<usize>,
    pub tau: Option<f32>,
    pub momentum: Option<f32>,
}

pub fn parse_description(text: &str) -> Result<ModelDescription, ModelError> {
    toml::from_str(text).map_err(|e| ModelError::Description(e.to_string()))
}

/// The small CBR classifier used by the bundled experiments: three CBR
/// blocks of 16, 32 and 32 channels with 2x2 max pooling after the first
/// two, then global average pooling and a linear head.
pub fn reference_cnn(side: usize, classes: usize, seed: u64) -> String {
    let mut text = format!("input = [3, {side}, {side}]\nclasses = {classes}\nseed = {seed}\n");
    for (i, out) in [16, 32, 32].into_iter().enumerate() {
        text += &format!("\n[[layers]]\nkind = \"cbr\"\nout = {out}\npadding = 1\n");
        if i < 2 {
            text += "\n[[layers]]\nkind = \"maxpool\"\nsize = 2\n";
        }
    }
    text += &format!("\n[[layers]]\nkind = \"globalavgpool\"\n\n[[layers]]\nkind = \"linear\"\nout = {classes}\n");
    text
}

fn positive(layer: usize, name: &str, v: usize) -> Result<usize, ModelError> {
    if v == 0 {
        return Err(ModelError::InvalidLayer {
            layer,
            msg: format!("{name} must be positive"),
        });
    }
    Ok(v)
}

/// Rejects weight tensors too large to allocate.
fn weight_budget(layer: usize, dims: &[usize]) -> Result<(), ModelError> {
    match dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)) {
        Some(n) if n <= MAX_ELEMENTS => Ok(()),
        _ => Err(ModelError::InvalidLayer {
            layer,
            msg: format!("weights {dims:?} exceed {MAX_ELEMENTS} elements"),
        }),
    }
}

/// Expands and validates a description, then initializes parameters from
/// its seed.
pub fn build_model(desc: &ModelDescription) -> Result<ModelGraph, ModelError> {
    if desc.layers.is_empty() {
        return Err(ModelError::Empty);
    }
    let [c, h, w] = desc.input;
    for (name, v) in [("input channels", c), ("input height", h), ("input width", w), ("classes", desc.classes)] {
        positive(0, name, v)?;
    }
    let bn_scale = desc.bn_init_scale.unwrap_or(DEFAULT_BN_SCALE);
    // Channel count flowing into the next layer; `None` once flattened.
    let mut channels = c;
    let mut layers = Vec::new();
    for (i, ld) in desc.layers.iter().enumerate() {
        if let Some(declared) = ld.in_channels {
            if declared != channels {
                return Err(ModelError::ChannelMismatch {
                    layer: i,
                    expected: declared,
                    actual: channels,
                });
            }
        }
        let need_out = || {
            ld.out_channels
                .ok_or_else(|| ModelError::InvalidLayer {
                    layer: i,
                    msg: format!("{} needs `out`", ld.kind),
                })
                .and_then(|o| positive(i, "out", o))
        };
        let conv = |out: usize| -> Result<Layer, ModelError> {
            let k = positive(i, "kernel", ld.kernel.unwrap_or(3))?;
            let stride = positive(i, "stride", ld.stride.unwrap_or(1))?;
            weight_budget(i, &[out, channels, k, k])?;
            let p = ConvParams::new(
                Tensor::zeros(&[out, channels, k, k]),
                vec![0.0; out],
                stride,
                ld.padding.unwrap_or(0),
            )?;
            Ok(Layer::Conv(p))
        };
        let bn = |ch: usize| {
            let mut p = BnParams::new(ch, bn_scale);
            if let Some(t) = ld.tau {
                p.tau = t;
            }
            if let Some(m) = ld.momentum {
                p.momentum = m;
            }
            Layer::BatchNorm(p)
        };
        match ld.kind.as_str() {
            "cbr" => {
                let out = need_out()?;
                layers.push(conv(out)?);
                layers.push(bn(out));
                layers.push(Layer::Relu);
                channels = out;
            }
            "conv" => {
                let out = need_out()?;
                layers.push(conv(out)?);
                channels = out;
            }
            "batchnorm" => {
                if let Some(o) = ld.out_channels {
                    if o != channels {
                        return Err(ModelError::ChannelMismatch {
                            layer: i,
                            expected: o,
                            actual: channels,
                        });
                    }
                }
                layers.push(bn(channels));
            }
            "relu" => layers.push(Layer::Relu),
            "maxpool" => layers.push(Layer::MaxPool {
                size: positive(i, "size", ld.size.unwrap_or(2))?,
            }),
            "globalavgpool" => layers.push(Layer::GlobalAvgPool),
            "linear" => {
                let out = need_out()?;
                weight_budget(i, &[out, channels])?;
                layers.push(Layer::Linear(LinearParams::new(
                    Tensor::zeros(&[out, channels]),
                    vec![0.0; out],
                )?));
                channels = out;
            }
            other => return Err(ModelError::UnknownKind(other.to_string())),
        }
    }
    let mut model = ModelGraph {
        input: InputShape::new(c, h, w),
        classes: desc.classes,
        layers,
    };
    model.validate()?;
    model.initialize(desc.seed, bn_scale);
    Ok(model)
}
