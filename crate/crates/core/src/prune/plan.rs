use std::fmt;
use std::str::FromStr;

use crate::error::PruneError;
use crate::model::{model_hash, Layer, ModelGraph};

/// One batch-norm channel and its importance `|scale|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEntry {
    /// Position of the batch-norm layer in the model's layer list.
    pub layer_index: usize,
    pub channel_index: usize,
    pub magnitude: f32,
}

/// Every batch-norm channel of the network, ascending by `|scale|`; ties
/// keep declaration order (layer, then channel).
pub fn collect_scales(model: &ModelGraph) -> Result<Vec<ScaleEntry>, PruneError> {
    let mut out: Vec<ScaleEntry> = model
        .batchnorm_layers()
        .flat_map(|(layer_index, bn)| {
            bn.scale.iter().enumerate().map(move |(channel_index, s)| ScaleEntry {
                layer_index,
                channel_index,
                magnitude: s.abs(),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(PruneError::NoBatchNorm);
    }
    out.sort_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMethod {
    /// Remove strictly by the global threshold.
    Normal,
    /// Normal, then round every touched layer's survivors to a multiple of 8.
    Regular,
}

impl PruneMethod {
    pub fn name(self) -> &'static str {
        match self {
            PruneMethod::Normal => "normal",
            PruneMethod::Regular => "regular",
        }
    }
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PruneMethod {
    type Err = PruneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(PruneMethod::Normal),
            "regular" => Ok(PruneMethod::Regular),
            other => Err(PruneError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub bn_layer: usize,
    pub keep: Vec<bool>,
    /// Constant each removed channel would have fed its consumer, in
    /// channel order.
    pub compensation: Vec<f32>,
}

impl LayerPlan {
    pub fn survivors(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn removed(&self) -> usize {
        self.keep.len() - self.survivors()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunePlan {
    pub method: PruneMethod,
    pub ratio: f64,
    /// `|scale|` of the largest removed channel; `None` when nothing is
    /// removed.
    pub threshold: Option<f32>,
    pub model_hash: String,
    pub layers: Vec<LayerPlan>,
    /// Channels the layer-collapse guard put back.
    pub guard_restored: usize,
}

impl PrunePlan {
    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.keep.len()).sum()
    }

    pub fn removed(&self) -> usize {
        self.layers.iter().map(LayerPlan::removed).sum()
    }

    pub fn realized_fraction(&self) -> f64 {
        self.removed() as f64 / self.total() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.removed() == 0
    }
}

/// Number of channels the ratio asks for: `floor(ratio * total)`, with a
/// small slack so that e.g. `0.7 * 10` is 7 despite rounding.
pub fn target_removals(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64) + 1e-9).floor() as usize
}

/// Value a channel whose scale is zero feeds downstream: its shift, passed
/// through every relu between the batch norm and the next conv or linear
/// layer. Pooling a constant leaves it unchanged.
pub(crate) fn propagated_constant(model: &ModelGraph, bn_layer: usize, shift: f32) -> f32 {
    let mut v = shift;
    for layer in &model.layers[bn_layer + 1..] {
        match layer {
            Layer::Relu => v = v.max(0.0),
            Layer::MaxPool { .. } | Layer::GlobalAvgPool => {}
            _ => break,
        }
    }
    v
}

pub fn plan_prune(
    scales: &[ScaleEntry],
    ratio: f64,
    method: PruneMethod,
    model: &ModelGraph,
) -> Result<PrunePlan, PruneError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(PruneError::InvalidRatio(ratio));
    }
    if scales.is_empty() {
        return Err(PruneError::EmptyScales);
    }
    let bn: Vec<(usize, usize)> = model.batchnorm_layers().map(|(i, b)| (i, b.channels())).collect();
    let total: usize = bn.iter().map(|b| b.1).sum();
    if scales.len() != total {
        return Err(PruneError::PlanMismatch(format!(
            "{} scale entries for {total} batch-norm channels",
            scales.len()
        )));
    }
    let slot = |layer: usize| {
        bn.iter()
            .position(|b| b.0 == layer)
            .ok_or_else(|| PruneError::PlanMismatch(format!("layer {layer} is not a batch norm")))
    };

    // Rank of every channel in the ascending order, per layer.
    let mut rank: Vec<Vec<usize>> = bn.iter().map(|b| vec![usize::MAX; b.1]).collect();
    for (r, e) in scales.iter().enumerate() {
        let s = slot(e.layer_index)?;
        let cell = rank[s]
            .get_mut(e.channel_index)
            .ok_or_else(|| PruneError::PlanMismatch(format!("channel {} out of range", e.channel_index)))?;
        if *cell != usize::MAX {
            return Err(PruneError::PlanMismatch("duplicate scale entry".into()));
        }
        *cell = r;
    }

    let n_remove = target_removals(ratio, total);
    let mut keep: Vec<Vec<bool>> = rank.iter().map(|r| r.iter().map(|&x| x >= n_remove).collect()).collect();

    // Layer-collapse guard: put back the largest-magnitude victim.
    let mut guard_restored = 0;
    for (k, r) in keep.iter_mut().zip(&rank) {
        if !k.contains(&true) {
            let best = (0..r.len()).max_by_key(|&c| r[c]).expect("layers have channels");
            k[best] = true;
            guard_restored += 1;
        }
    }

    if method == PruneMethod::Regular {
        for (k, r) in keep.iter_mut().zip(&rank) {
            let n = k.len();
            let s = k.iter().filter(|&&x| x).count();
            if s == n {
                continue;
            }
            let target = if n < 8 {
                n
            } else {
                let up = s.div_ceil(8) * 8;
                if up <= n {
                    up
                } else {
                    n / 8 * 8
                }
            };
            // Channels of this layer from most to least important.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&c| std::cmp::Reverse(r[c]));
            for (pos, &c) in order.iter().enumerate() {
                k[c] = pos < target;
            }
        }
    }

    let layers: Vec<LayerPlan> = bn
        .iter()
        .zip(keep)
        .map(|(&(bn_layer, _), keep)| {
            let Layer::BatchNorm(p) = &model.layers[bn_layer] else {
                unreachable!("indices come from batchnorm_layers")
            };
            let compensation = keep
                .iter()
                .zip(&p.shift)
                .filter(|(k, _)| !**k)
                .map(|(_, &t)| propagated_constant(model, bn_layer, t))
                .collect();
            LayerPlan {
                bn_layer,
                keep,
                compensation,
            }
        })
        .collect();

    let threshold = scales
        .iter()
        .filter(|e| {
            let s = slot(e.layer_index).expect("checked above");
            !layers[s].keep[e.channel_index]
        })
        .map(|e| e.magnitude)
        .last();

    Ok(PrunePlan {
        method,
        ratio,
        threshold,
        model_hash: model_hash(model),
        layers,
        guard_restored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BnParams, ConvParams};
    use crate::model::InputShape;
    use crate::tensor::Tensor;

    /// conv -> bn -> relu per width, then GAP and a linear head.
    pub(crate) fn stack(widths: &[usize], scales: &[f32]) -> ModelGraph {
        let mut layers = Vec::new();
        let mut c = 2;
        let mut it = scales.iter();
        for &w in widths {
            layers.push(Layer::Conv(
                ConvParams::new(Tensor::zeros(&[w, c, 1, 1]), vec![0.0; w], 1, 0).unwrap(),
            ));
            let mut bn = BnParams::new(w, 1.0);
            for s in &mut bn.scale {
                *s = *it.next().unwrap();
            }
            layers.push(Layer::BatchNorm(bn));
            layers.push(Layer::Relu);
            c = w;
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Linear(
            crate::layers::LinearParams::new(Tensor::zeros(&[2, c]), vec![0.0; 2]).unwrap(),
        ));
        ModelGraph {
            input: InputShape::new(2, 3, 3),
            classes: 2,
            layers,
        }
    }

    fn plan(m: &ModelGraph, ratio: f64, method: PruneMethod) -> PrunePlan {
        plan_prune(&collect_scales(m).unwrap(), ratio, method, m).unwrap()
    }

    #[test]
    fn seventy_percent_of_ten() {
        let s: Vec<f32> = (1..=10).map(|i| i as f32 / 10.0).collect();
        let m = stack(&[10], &s);
        let p = plan(&m, 0.7, PruneMethod::Normal);
        assert_eq!(p.removed(), 7);
        assert_eq!(p.layers[0].keep, [false; 7].iter().chain(&[true; 3]).copied().collect::<Vec<_>>());
        assert_eq!(p.threshold, Some(0.7));
    }

    #[test]
    fn zero_ratio_is_empty() {
        let m = stack(&[4, 4], &[0.3; 8]);
        let p = plan(&m, 0.0, PruneMethod::Regular);
        assert!(p.is_empty());
        assert_eq!(p.threshold, None);
    }

    #[test]
    fn ties_follow_declaration_order() {
        let m = stack(&[2, 2], &[0.5; 4]);
        let s = collect_scales(&m).unwrap();
        let order: Vec<_> = s.iter().map(|e| (e.layer_index, e.channel_index)).collect();
        assert_eq!(order, vec![(1, 0), (1, 1), (4, 0), (4, 1)]);
    }

    #[test]
    fn guard_keeps_the_largest_victim() {
        // Layer 0 is all tiny; layer 1 is large.
        let m = stack(&[3, 3], &[0.01, 0.03, 0.02, 1.0, 2.0, 3.0]);
        let p = plan(&m, 0.5, PruneMethod::Normal);
        assert_eq!(p.layers[0].keep, vec![false, true, false]);
        assert_eq!(p.guard_restored, 1);
        assert_eq!(p.removed(), 2);
    }

    #[test]
    fn regular_rounds_up_to_eight() {
        // 16 channels, 3 above the cut -> 8 survivors; 9 above -> 16.
        let mut s: Vec<f32> = (0..16).map(|i| 0.01 * (i + 1) as f32).collect();
        s.extend([5.0; 16]);
        let m = stack(&[16, 16], &s);
        let p = plan(&m, 13.0 / 32.0, PruneMethod::Regular);
        assert_eq!(p.layers[0].survivors(), 8);
        assert!(p.layers[0].keep[8..].iter().all(|&k| k));
        let p = plan(&m, 7.0 / 32.0, PruneMethod::Regular);
        assert_eq!(p.layers[0].survivors(), 16);
    }

    #[test]
    fn regular_small_and_ragged_layers() {
        let mut s = vec![0.01f32; 4];
        s.extend((0..12).map(|i| 0.02 + i as f32 * 0.01));
        let m = stack(&[4, 12], &s);
        // Removes the 4 small channels and 2 of the 12-wide layer.
        let normal = plan(&m, 6.0 / 16.0, PruneMethod::Normal);
        assert_eq!(normal.layers[0].survivors(), 1);
        assert_eq!(normal.layers[1].survivors(), 10);
        let regular = plan(&m, 6.0 / 16.0, PruneMethod::Regular);
        assert_eq!(regular.layers[0].survivors(), 4);
        assert_eq!(regular.layers[1].survivors(), 8);
    }

    #[test]
    fn invalid_inputs() {
        let m = stack(&[4], &[0.1; 4]);
        let s = collect_scales(&m).unwrap();
        assert!(matches!(plan_prune(&s, 1.0, PruneMethod::Normal, &m), Err(PruneError::InvalidRatio(_))));
        assert!(matches!(plan_prune(&s, -0.1, PruneMethod::Normal, &m), Err(PruneError::InvalidRatio(_))));
        assert!(matches!(plan_prune(&[], 0.1, PruneMethod::Normal, &m), Err(PruneError::EmptyScales)));
        assert!("Regular".parse::<PruneMethod>().is_err());
        assert_eq!("regular".parse::<PruneMethod>().unwrap(), PruneMethod::Regular);
        let bare = ModelGraph {
            layers: vec![Layer::GlobalAvgPool],
            ..m
        };
        assert!(matches!(collect_scales(&bare), Err(PruneError::NoBatchNorm)));
    }

    #[test]
    fn compensation_is_relu_of_shift() {
        let mut m = stack(&[2], &[0.0, 1.0]);
        if let Layer::BatchNorm(bn) = &mut m.layers[1] {
            bn.shift = vec![-0.5, 0.0];
        }
        assert_eq!(plan(&m, 0.5, PruneMethod::Normal).layers[0].compensation, vec![0.0]);
        if let Layer::BatchNorm(bn) = &mut m.layers[1] {
            bn.shift = vec![0.75, 0.0];
        }
        assert_eq!(plan(&m, 0.5, PruneMethod::Normal).layers[0].compensation, vec![0.75]);
    }
}
