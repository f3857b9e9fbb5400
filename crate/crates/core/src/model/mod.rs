//! Sequential layer graphs: validation, forward/backward execution and
//! parameter bookkeeping.

mod count;
mod description;
pub mod format;

pub use count::{count_flops, count_params, LayerCost};
pub use description::{build_model, parse_description, reference_cnn, LayerDescription, ModelDescription};
pub use format::{decode_model, encode_model, encoded_len, load_model, model_hash, save_model, FORMAT_VERSION};

/// Upper bound on the elements of any one activation or weight tensor.
pub const MAX_ELEMENTS: usize = 1 << 28;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, TensorError};
use crate::layers::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv2d_backward, conv2d_forward,
    global_avg_pool_backward, global_avg_pool_forward, linear_backward, linear_forward, maxpool_backward,
    maxpool_forward, pool::maxpool_extent, relu_backward, relu_forward, BnCache, BnParams, ConvParams, LinearParams,
};
use crate::tensor::Tensor;

pub const DEFAULT_BN_SCALE: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvParams),
    BatchNorm(BnParams),
    Relu,
    MaxPool { size: usize },
    GlobalAvgPool,
    Linear(LinearParams),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::GlobalAvgPool => "globalavgpool",
            Layer::Linear(_) => "linear",
        }
    }
}

/// `channels x height x width` of a single input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn batch(&self, n: usize) -> [usize; 4] {
        [n, self.channels, self.height, self.width]
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Activation {
    pub fn elements(&self) -> usize {
        match *self {
            Activation::Spatial { c, h, w } => c * h * w,
            Activation::Flat(f) => f,
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            Activation::Spatial { c, .. } => c,
            Activation::Flat(f) => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input: InputShape,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

/// Per-layer values kept by a train-mode forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv(Tensor),
    BatchNorm(BnCache),
    Relu(Tensor),
    MaxPool { input_shape: Vec<usize>, argmax: Vec<usize> },
    GlobalAvgPool { input_shape: Vec<usize> },
    Linear(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Conv { weights: Vec<f32>, bias: Vec<f32> },
    BatchNorm { scale: Vec<f32>, shift: Vec<f32> },
    None,
    Linear { weights: Vec<f32>, bias: Vec<f32> },
}

impl LayerGrad {
    /// Gradient slices in the same order as [`ModelGraph::params_mut`].
    pub fn slices(&self) -> Vec<&[f32]> {
        match self {
            LayerGrad::Conv { weights, bias } | LayerGrad::Linear { weights, bias } => vec![weights, bias],
            LayerGrad::BatchNorm { scale, shift } => vec![scale, shift],
            LayerGrad::None => vec![],
        }
    }
}

impl ModelGraph {
    /// Walks the layer chain from the declared input and returns the
    /// activation after every layer.
    pub fn activations(&self) -> Result<Vec<Activation>, ModelError> {
        self.activations_from(self.input)
    }

    pub fn activations_from(&self, input: InputShape) -> Result<Vec<Activation>, ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Empty);
        }
        if input.channels == 0 || input.height == 0 || input.width == 0 {
            return Err(ModelError::InvalidLayer {
                layer: 0,
                msg: "input extents must be positive".into(),
            });
        }
        let elements = input.channels.checked_mul(input.height).and_then(|x| x.checked_mul(input.width));
        if elements.is_none_or(|n| n > MAX_ELEMENTS) {
            return Err(ModelError::InvalidLayer {
                layer: 0,
                msg: format!("input exceeds {MAX_ELEMENTS} elements"),
            });
        }
        let mut cur = Activation::Spatial {
            c: input.channels,
            h: input.height,
            w: input.width,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| ModelError::InvalidLayer { layer: i, msg };
            let mismatch = |expected, actual| ModelError::ChannelMismatch {
                layer: i,
                expected,
                actual,
            };
            cur = match (layer, cur) {
                (Layer::Conv(p), Activation::Spatial { c, h, w }) => {
                    if p.in_channels() != c {
                        return Err(mismatch(p.in_channels(), c));
                    }
                    if p.bias.len() != p.out_channels() || p.stride == 0 {
                        return Err(bad("malformed conv parameters".into()));
                    }
                    let (oh, ow) = p.output_extent(h, w).map_err(|e| bad(e.to_string()))?;
                    Activation::Spatial {
                        c: p.out_channels(),
                        h: oh,
                        w: ow,
                    }
                }
                (Layer::BatchNorm(bn), Activation::Spatial { c, h, w }) => {
                    bn.validate().map_err(|e| bad(e.to_string()))?;
                    if bn.channels() != c {
                        return Err(mismatch(bn.channels(), c));
                    }
                    Activation::Spatial { c, h, w }
                }
                (Layer::Relu, a) => a,
                (Layer::MaxPool { size }, Activation::Spatial { c, h, w }) => {
                    let (oh, ow) = maxpool_extent(h, w, *size).map_err(|e| bad(e.to_string()))?;
                    Activation::Spatial { c, h: oh, w: ow }
                }
                (Layer::GlobalAvgPool, Activation::Spatial { c, .. }) => Activation::Flat(c),
                (Layer::Linear(p), Activation::Flat(f)) => {
                    if p.in_features() != f {
                        return Err(mismatch(p.in_features(), f));
                    }
                    if p.bias.len() != p.out_features() {
                        return Err(bad("malformed linear parameters".into()));
                    }
                    Activation::Flat(p.out_features())
                }
                (layer, Activation::Flat(_)) => {
                    return Err(bad(format!("{} needs a spatial input; insert it before globalavgpool", layer.kind_name())))
                }
                (layer, Activation::Spatial { .. }) => {
                    return Err(bad(format!("{} needs a flat input; add globalavgpool first", layer.kind_name())))
                }
            };
            if let Activation::Spatial { c, h, w } = cur {
                if c.checked_mul(h).and_then(|x| x.checked_mul(w)).is_none_or(|n| n > MAX_ELEMENTS) {
                    return Err(bad(format!("{c}x{h}x{w} activation exceeds {MAX_ELEMENTS} elements")));
                }
            }
            out.push(cur);
        }
        Ok(out)
    }

    /// Checks the whole chain, including that it ends in `classes` logits.
    pub fn validate(&self) -> Result<(), ModelError> {
        let acts = self.activations()?;
        match acts.last() {
            Some(Activation::Flat(k)) if *k == self.classes && *k > 0 => Ok(()),
            Some(a) => Err(ModelError::InvalidLayer {
                layer: self.layers.len() - 1,
                msg: format!("model must end in {} logits, ends in {a:?}", self.classes),
            }),
            None => Err(ModelError::Empty),
        }
    }

    /// `(layer index, params)` for every batch-norm layer, in order.
    pub fn batchnorm_layers(&self) -> impl Iterator<Item = (usize, &BnParams)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::BatchNorm(bn) => Some((i, bn)),
            _ => None,
        })
    }

    pub fn batchnorm_channel_counts(&self) -> Vec<usize> {
        self.batchnorm_layers().map(|(_, bn)| bn.channels()).collect()
    }

    /// `sum |scale|` over every batch-norm channel.
    pub fn scale_l1(&self) -> f64 {
        self.batchnorm_layers()
            .flat_map(|(_, bn)| bn.scale.iter())
            .map(|s| s.abs() as f64)
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let (_, c, _, _) = x.nchw()?;
        if c != self.input.channels {
            return Err(TensorError::ChannelMismatch {
                expected: self.input.channels,
                actual: c,
            }
            .into());
        }
        Ok(())
    }

    /// Eval-mode forward pass. Batch norm uses running statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(p) => conv2d_forward(&cur, p)?,
                Layer::BatchNorm(bn) => batchnorm_forward_eval(&cur, bn)?,
                Layer::Relu => relu_forward(&cur),
                Layer::MaxPool { size } => maxpool_forward(&cur, *size)?.0,
                Layer::GlobalAvgPool => global_avg_pool_forward(&cur)?,
                Layer::Linear(p) => linear_forward(&cur, p)?,
            };
        }
        Ok(cur)
    }

    /// Train-mode forward pass: batch statistics, running-stat updates, and
    /// a cache per layer for [`ModelGraph::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Vec<LayerCache>), ModelError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (next, cache) = match layer {
                Layer::Conv(p) => (conv2d_forward(&cur, p)?, LayerCache::Conv(cur)),
                Layer::BatchNorm(bn) => {
                    let (y, c) = batchnorm_forward_train(&cur, bn)?;
                    (y, LayerCache::BatchNorm(c))
                }
                Layer::Relu => (relu_forward(&cur), LayerCache::Relu(cur)),
                Layer::MaxPool { size } => {
                    let (y, argmax) = maxpool_forward(&cur, *size)?;
                    (
                        y,
                        LayerCache::MaxPool {
                            input_shape: cur.shape().to_vec(),
                            argmax,
                        },
                    )
                }
                Layer::GlobalAvgPool => (
                    global_avg_pool_forward(&cur)?,
                    LayerCache::GlobalAvgPool {
                        input_shape: cur.shape().to_vec(),
                    },
                ),
                Layer::Linear(p) => (linear_forward(&cur, p)?, LayerCache::Linear(cur)),
            };
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Back-propagates `grad_logits`; `l1_coeff * sign(scale)` is added to
    /// every batch-norm scale gradient.
    pub fn backward(&self, caches: &[LayerCache], grad_logits: &Tensor, l1_coeff: f32) -> Result<Vec<LayerGrad>, ModelError> {
        if caches.len() != self.layers.len() {
            return Err(TensorError::InvalidArgument("cache count does not match layer count".into()).into());
        }
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            g = match (layer, cache) {
                (Layer::Conv(p), LayerCache::Conv(x)) => {
                    let cg = conv2d_backward(x, p, &g)?;
                    grads[i] = LayerGrad::Conv {
                        weights: cg.weights.into_data(),
                        bias: cg.bias,
                    };
                    cg.input
                }
                (Layer::BatchNorm(_), LayerCache::BatchNorm(c)) => {
                    let bg = batchnorm_backward(c, &g, l1_coeff)?;
                    grads[i] = LayerGrad::BatchNorm {
                        scale: bg.scale,
                        shift: bg.shift,
                    };
                    bg.input
                }
                (Layer::Relu, LayerCache::Relu(x)) => relu_backward(x, &g)?,
                (Layer::MaxPool { .. }, LayerCache::MaxPool { input_shape, argmax }) => {
                    maxpool_backward(input_shape, argmax, &g)?
                }
                (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool { input_shape }) => {
                    global_avg_pool_backward(input_shape, &g)?
                }
                (Layer::Linear(p), LayerCache::Linear(x)) => {
                    let lg = linear_backward(x, p, &g)?;
                    grads[i] = LayerGrad::Linear {
                        weights: lg.weights.into_data(),
                        bias: lg.bias,
                    };
                    lg.input
                }
                _ => {
                    return Err(TensorError::InvalidArgument(format!("cache {i} does not match its layer")).into());
                }
            };
        }
        Ok(grads)
    }

    /// Mutable views of every trainable array: conv weights and bias, batch
    /// norm scale and shift, linear weights and bias, in layer order.
    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(p) => {
                    out.push(p.weights.data_mut());
                    out.push(&mut p.bias);
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.scale);
                    out.push(&mut bn.shift);
                }
                Layer::Linear(p) => {
                    out.push(p.weights.data_mut());
                    out.push(&mut p.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Re-draws conv and linear weights (Kaiming normal, fan-in), zeroes
    /// biases and resets batch norm to scale `bn_scale`, shift 0.
    pub fn initialize(&mut self, seed: u64, bn_scale: f32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(p) => {
                    let (kh, kw) = p.kernel();
                    let fan_in = p.in_channels() * kh * kw;
                    p.weights = Tensor::randn(p.weights.shape(), (2.0 / fan_in as f64).sqrt(), &mut rng);
                    p.bias.fill(0.0);
                }
                Layer::BatchNorm(bn) => *bn = BnParams::new(bn.channels(), bn_scale),
                Layer::Linear(p) => {
                    let fan_in = p.in_features();
                    p.weights = Tensor::randn(p.weights.shape(), (2.0 / fan_in as f64).sqrt(), &mut rng);
                    p.bias.fill(0.0);
                }
                _ => {}
            }
        }
    }
}
