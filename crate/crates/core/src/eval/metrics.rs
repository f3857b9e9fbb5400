use std::collections::BTreeMap;

use super::dataset::{images_to_tensor, Dataset};
use crate::error::EvalError;
use crate::layers::softmax;
use crate::model::ModelGraph;

/// Axis-aligned box in pixel coordinates. `confidence` is 1 for ground
/// truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
    pub class: usize,
    pub confidence: f32,
}

impl BoundingBox {
    pub fn ground_truth(x_min: f32, y_min: f32, x_max: f32, y_max: f32, class: usize) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class,
            confidence: 1.0,
        }
    }

    pub fn prediction(x_min: f32, y_min: f32, x_max: f32, y_max: f32, class: usize, confidence: f32) -> Self {
        Self {
            confidence,
            ..Self::ground_truth(x_min, y_min, x_max, y_max, class)
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) as f64 * (self.y_max - self.y_min).max(0.0) as f64
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0) as f64;
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0) as f64;
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// AP for every class that has at least one ground-truth box.
    pub per_class: BTreeMap<usize, f64>,
}

/// All-point interpolated mAP.
///
/// Per class, predictions are ranked by descending confidence (ties keep
/// input order: image index, then position in the image's list). Each one
/// is matched to the unmatched ground truth of that class in the same image
/// with the highest IoU (first one on IoU ties) if that IoU reaches
/// `iou_threshold`. AP is the area under the monotone precision envelope,
/// which reduces to the mean of the envelope at each true-positive rank
/// taken over all ground truths. Classes without ground truth are left out
/// of the mean; with no ground truth at all the mAP is 0.
pub fn mean_average_precision(
    preds: &[Vec<BoundingBox>],
    gts: &[Vec<BoundingBox>],
    iou_threshold: f64,
) -> MapResult {
    let mut classes: BTreeMap<usize, usize> = BTreeMap::new();
    for b in gts.iter().flatten() {
        *classes.entry(b.class).or_default() += 1;
    }
    let mut per_class = BTreeMap::new();
    for (&class, &n_gt) in &classes {
        let mut ranked: Vec<(usize, &BoundingBox)> = preds
            .iter()
            .enumerate()
            .flat_map(|(img, ps)| ps.iter().filter(|p| p.class == class).map(move |p| (img, p)))
            .collect();
        ranked.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));

        let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut hits = Vec::with_capacity(ranked.len());
        for (img, p) in ranked {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.get(img).into_iter().flatten().enumerate() {
                if g.class != class || matched[img][j] {
                    continue;
                }
                let o = iou(p, g);
                if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                matched[img][j] = true;
            }
            hits.push(best.is_some());
        }

        let mut precision = Vec::with_capacity(hits.len());
        let mut tp = 0usize;
        for (k, &hit) in hits.iter().enumerate() {
            tp += hit as usize;
            precision.push(tp as f64 / (k + 1) as f64);
        }
        for k in (0..precision.len().saturating_sub(1)).rev() {
            precision[k] = precision[k].max(precision[k + 1]);
        }
        let area: f64 = hits.iter().zip(&precision).filter(|(h, _)| **h).map(|(_, p)| p).sum();
        per_class.insert(class, area / n_gt as f64);
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    MapResult { map, per_class }
}

/// Eval-mode class prediction and its softmax probability per sample.
pub fn predict(model: &ModelGraph, dataset: &Dataset) -> Result<Vec<(usize, f32)>, EvalError> {
    const CHUNK: usize = 64;
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.samples.chunks(CHUNK) {
        let x = images_to_tensor(chunk.iter().map(|s| &s.image))?;
        let probs = softmax(&model.forward(&x)?).map_err(crate::error::ModelError::from)?;
        let k = probs.shape()[1];
        for row in probs.data().chunks_exact(k) {
            // First maximum wins on ties.
            let (arg, &p) = row
                .iter()
                .enumerate()
                .fold((0, &row[0]), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
            out.push((arg, p));
        }
    }
    Ok(out)
}

/// Fraction of samples whose argmax logit equals the label.
pub fn classify_accuracy(model: &ModelGraph, dataset: &Dataset) -> Result<f64, EvalError> {
    let preds = predict(model, dataset)?;
    let correct = preds
        .iter()
        .zip(&dataset.samples)
        .filter(|((c, _), s)| *c == s.label)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Classification used as a detector: every image yields its annotated box
/// labelled with the predicted class and softmax confidence. Returns
/// `(predictions, ground truths)` per image.
pub fn box_predictions(
    model: &ModelGraph,
    dataset: &Dataset,
) -> Result<(Vec<Vec<BoundingBox>>, Vec<Vec<BoundingBox>>), EvalError> {
    let preds = predict(model, dataset)?;
    Ok(dataset
        .samples
        .iter()
        .zip(preds)
        .map(|(s, (class, conf))| {
            let b = s.bbox;
            (
                vec![BoundingBox::prediction(b.x_min, b.y_min, b.x_max, b.y_max, class, conf)],
                vec![b],
            )
        })
        .unzip())
}
