use super::{Activation, InputShape, Layer, ModelGraph};
use crate::error::ModelError;

/// Stored real values: conv weights and bias, the four batch-norm vectors,
/// linear weights and bias.
pub fn count_params(model: &ModelGraph) -> usize {
    model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(p) => p.weights.len() + p.bias.len(),
            Layer::BatchNorm(bn) => 4 * bn.channels(),
            Layer::Linear(p) => p.weights.len() + p.bias.len(),
            _ => 0,
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: usize,
    pub flops: u64,
}

/// Per-image floating-point operation count, layer by layer.
///
/// conv: `2*in*kh*kw*out*H'*W' + out*H'*W'`; batch norm: 2 per element;
/// relu: 1 per element; max pool: `k*k - 1` comparisons per output;
/// global average pool: 1 add per input element; linear: `2*in*out + out`.
pub fn layer_flops(model: &ModelGraph, input: InputShape) -> Result<Vec<LayerCost>, ModelError> {
    let acts = model.activations_from(input)?;
    let mut prev = Activation::Spatial {
        c: input.channels,
        h: input.height,
        w: input.width,
    };
    let mut out = Vec::with_capacity(acts.len());
    for (i, (layer, &act)) in model.layers.iter().zip(&acts).enumerate() {
        let flops = match (layer, act) {
            (Layer::Conv(p), Activation::Spatial { c, h, w }) => {
                let (kh, kw) = p.kernel();
                let positions = (h * w) as u64;
                2 * (p.in_channels() * kh * kw) as u64 * c as u64 * positions + c as u64 * positions
            }
            (Layer::BatchNorm(_), a) => 2 * a.elements() as u64,
            (Layer::Relu, a) => a.elements() as u64,
            (Layer::MaxPool { size }, a) => ((size * size - 1) * a.elements()) as u64,
            (Layer::GlobalAvgPool, _) => prev.elements() as u64,
            (Layer::Linear(p), _) => (2 * p.in_features() * p.out_features() + p.out_features()) as u64,
            _ => 0,
        };
        out.push(LayerCost { layer: i, flops });
        prev = act;
    }
    Ok(out)
}

pub fn count_flops(model: &ModelGraph, input: InputShape) -> Result<u64, ModelError> {
    Ok(layer_flops(model, input)?.iter().map(|c| c.flops).sum())
}
