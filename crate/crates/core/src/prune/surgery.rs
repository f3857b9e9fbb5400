use super::plan::PrunePlan;
use crate::error::PruneError;
use crate::layers::{ConvParams, LinearParams};
use crate::model::{model_hash, Layer, ModelGraph};
use crate::tensor::Tensor;

fn unprunable(layer: usize, reason: impl Into<String>) -> PruneError {
    PruneError::Unprunable {
        layer,
        reason: reason.into(),
    }
}

/// Next conv or linear layer after `bn_layer`, looking through relu and
/// pooling only.
fn consumer(model: &ModelGraph, bn_layer: usize) -> Result<usize, PruneError> {
    for (i, layer) in model.layers.iter().enumerate().skip(bn_layer + 1) {
        match layer {
            Layer::Relu | Layer::MaxPool { .. } | Layer::GlobalAvgPool => {}
            Layer::Conv(_) | Layer::Linear(_) => return Ok(i),
            Layer::BatchNorm(_) => return Err(unprunable(bn_layer, "followed by another batch norm")),
        }
    }
    Err(unprunable(bn_layer, "no conv or linear layer consumes its output"))
}

fn keep_rows(t: &Tensor, keep: &[bool]) -> Tensor {
    let rows = t.shape()[0];
    let row_len = t.len() / rows;
    let data: Vec<f32> = t
        .data()
        .chunks(row_len)
        .zip(keep)
        .filter(|(_, &k)| k)
        .flat_map(|(r, _)| r.iter().copied())
        .collect();
    let mut shape = t.shape().to_vec();
    shape[0] = keep.iter().filter(|&&k| k).count();
    Tensor::from_vec(&shape, data).expect("row selection keeps the row length")
}

/// Drops input channels (axis 1) of an `out x in x ...` tensor.
fn keep_inputs(t: &Tensor, keep: &[bool]) -> Tensor {
    let (out, inp) = (t.shape()[0], t.shape()[1]);
    let inner = t.len() / (out * inp);
    let mut data = Vec::with_capacity(t.len());
    for row in t.data().chunks(inp * inner) {
        for (slice, &k) in row.chunks(inner).zip(keep) {
            if k {
                data.extend_from_slice(slice);
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[1] = keep.iter().filter(|&&k| k).count();
    Tensor::from_vec(&shape, data).expect("input selection keeps the slice length")
}

/// `bias[j] += sum_c v_c * sum(W[j, c, ...])` over the removed channels,
/// accumulated in f64 and rounded once.
fn compensate(weights: &Tensor, bias: &mut [f32], keep: &[bool], constants: &[f32]) {
    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
    let inner = weights.len() / (out * inp);
    for (j, b) in bias.iter_mut().enumerate() {
        let mut add = 0.0f64;
        let removed = keep.iter().enumerate().filter(|(_, &k)| !k).map(|(c, _)| c);
        for (c, &v) in removed.zip(constants) {
            if v == 0.0 {
                continue;
            }
            let base = (j * inp + c) * inner;
            let ksum: f64 = weights.data()[base..base + inner].iter().map(|&w| w as f64).sum();
            add += v as f64 * ksum;
        }
        *b = (*b as f64 + add) as f32;
    }
}

/// Physically removes the planned channels and folds their constant output
/// into the consumer's bias. The input model is not modified.
pub fn apply_prune(model: &ModelGraph, plan: &PrunePlan) -> Result<ModelGraph, PruneError> {
    let hash = model_hash(model);
    if hash != plan.model_hash {
        return Err(PruneError::HashMismatch {
            plan: plan.model_hash.clone(),
            model: hash,
        });
    }
    let bn: Vec<(usize, usize)> = model.batchnorm_layers().map(|(i, b)| (i, b.channels())).collect();
    if bn.len() != plan.layers.len() {
        return Err(PruneError::PlanMismatch(format!(
            "plan covers {} batch-norm layers, model has {}",
            plan.layers.len(),
            bn.len()
        )));
    }
    for (lp, &(idx, n)) in plan.layers.iter().zip(&bn) {
        if lp.bn_layer != idx || lp.keep.len() != n {
            return Err(PruneError::PlanMismatch(format!(
                "plan entry for layer {} ({} channels) does not match layer {idx} ({n} channels)",
                lp.bn_layer,
                lp.keep.len()
            )));
        }
        if lp.compensation.len() != lp.removed() {
            return Err(PruneError::PlanMismatch(format!(
                "layer {idx}: {} compensation constants for {} removed channels",
                lp.compensation.len(),
                lp.removed()
            )));
        }
        if lp.survivors() == 0 {
            return Err(PruneError::EmptiesLayer(idx));
        }
    }

    let mut out = model.clone();
    for lp in plan.layers.iter().filter(|lp| lp.removed() > 0) {
        let idx = lp.bn_layer;
        let next = consumer(model, idx)?;
        let producer = idx
            .checked_sub(1)
            .filter(|&p| matches!(out.layers[p], Layer::Conv(_)))
            .ok_or_else(|| unprunable(idx, "not preceded by a conv"))?;

        let Layer::Conv(p) = &out.layers[producer] else { unreachable!() };
        let bias = p.bias.iter().zip(&lp.keep).filter(|(_, &k)| k).map(|(&b, _)| b).collect();
        out.layers[producer] = Layer::Conv(ConvParams {
            weights: keep_rows(&p.weights, &lp.keep),
            bias,
            stride: p.stride,
            padding: p.padding,
        });

        let Layer::BatchNorm(b) = &out.layers[idx] else { unreachable!() };
        out.layers[idx] = Layer::BatchNorm(b.select(&lp.keep));

        out.layers[next] = match &out.layers[next] {
            Layer::Conv(c) => {
                let mut bias = c.bias.clone();
                compensate(&c.weights, &mut bias, &lp.keep, &lp.compensation);
                Layer::Conv(ConvParams {
                    weights: keep_inputs(&c.weights, &lp.keep),
                    bias,
                    stride: c.stride,
                    padding: c.padding,
                })
            }
            Layer::Linear(l) => {
                if l.in_features() != lp.keep.len() {
                    return Err(unprunable(idx, "linear consumer does not see one feature per channel"));
                }
                let mut bias = l.bias.clone();
                compensate(&l.weights, &mut bias, &lp.keep, &lp.compensation);
                Layer::Linear(LinearParams {
                    weights: keep_inputs(&l.weights, &lp.keep),
                    bias,
                })
            }
            _ => unreachable!("consumer() only returns conv or linear"),
        };
    }
    out.validate()?;
    Ok(out)
}
