//! Mini-batch SGD on softmax cross-entropy plus `l1_coeff * sum |scale|`
//! over every batch-norm channel, and sparsity monitoring of the scales.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::error::{ModelError, TrainError};
use crate::eval::Dataset;
use crate::layers::{sgd_step, softmax_cross_entropy};
use crate::model::ModelGraph;
use crate::rng::stream;
use crate::tensor::Tensor;

pub const DEFAULT_SPARSITY_L1: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `gamma` every `step` epochs.
    StepDecay { step: usize, gamma: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub l1_coeff: f32,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            l1_coeff: 0.0,
            seed: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch-norm statistics");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.l1_coeff >= 0.0) || !self.l1_coeff.is_finite() {
            return bad("l1_coeff must be finite and non-negative");
        }
        if let LrSchedule::StepDecay { step, gamma } = self.schedule {
            if step == 0 || !(gamma > 0.0) || !gamma.is_finite() {
                return bad("step-decay needs step >= 1 and gamma > 0");
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::StepDecay { step, gamma } => self.lr * gamma.powi((epoch / step) as i32),
        }
    }
}

/// Losses of one optimisation step, all measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub task_loss: f64,
    /// `l1_coeff * sum |scale|`.
    pub penalty: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_loss: f64,
    pub penalty: f64,
    pub total_loss: f64,
    /// Accuracy of the train-mode predictions made during the epoch.
    pub accuracy: f64,
    /// `sum |scale|` at the end of the epoch.
    pub sum_abs_scale: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
}

fn check_dataset(model: &ModelGraph, data: &Dataset, resizes: bool) -> Result<(), TrainError> {
    let first = data.samples.first().ok_or(TrainError::EmptyDataset)?;
    if model.input.channels != 3 {
        return Err(TrainError::Model(ModelError::Description(format!(
            "model expects {} input channels, images have 3",
            model.input.channels
        ))));
    }
    let want = (first.image.height(), first.image.width());
    for (index, s) in data.samples.iter().enumerate() {
        if s.label >= model.classes {
            return Err(TrainError::LabelOutOfRange {
                index,
                label: s.label,
                classes: model.classes,
            });
        }
        let got = (s.image.height(), s.image.width());
        if got != want || (!resizes && got != (model.input.height, model.input.width)) {
            return Err(TrainError::Model(ModelError::Description(format!(
                "sample {index} is {}x{}, model input is {}x{}",
                got.0, got.1, model.input.height, model.input.width
            ))));
        }
    }
    Ok(())
}

pub fn train(model: &ModelGraph, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(model, data, config, None)
}

/// Trains a copy of `model`. With an augmenter every batch is passed through
/// it, using the global step index as the batch index.
///
/// The sample order of each epoch is a shuffle seeded by `(seed, epoch)`;
/// the last partial batch is dropped.
pub fn train_with(
    model: &ModelGraph,
    data: &Dataset,
    config: &TrainConfig,
    augmenter: Option<&Augmenter>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate()?;
    let resizes = augmenter.is_some_and(|a| a.config().is_enabled(crate::augment::Method::Shape));
    check_dataset(model, data, resizes)?;
    let steps_per_epoch = data.len() / config.batch_size;
    if steps_per_epoch == 0 {
        return Err(TrainError::EmptyDataset);
    }

    let mut model = model.clone();
    let planar: Vec<Vec<f32>> = data.samples.iter().map(|s| s.image.to_planar()).collect();
    let (h, w) = (data.samples[0].image.height(), data.samples[0].image.width());
    let mut velocity: Vec<Vec<f32>> = model.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::with_capacity(config.epochs * steps_per_epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(config.seed, &[epoch as u64]));
        let lr = config.lr_at(epoch);
        let (mut task_sum, mut pen_sum, mut correct) = (0.0, 0.0, 0usize);

        for step in 0..steps_per_epoch {
            let idx = &order[step * config.batch_size..(step + 1) * config.batch_size];
            let labels: Vec<usize> = idx.iter().map(|&i| data.samples[i].label).collect();
            let x = match augmenter {
                Some(aug) => {
                    let batch: Vec<_> = idx.iter().map(|&i| data.samples[i].image.clone()).collect();
                    let global = (epoch * steps_per_epoch + step) as u64;
                    let out = aug.apply_batch(&batch, global)?;
                    crate::eval::images_to_tensor(&out.images)?
                }
                None => {
                    let mut buf = Vec::with_capacity(idx.len() * 3 * h * w);
                    for &i in idx {
                        buf.extend_from_slice(&planar[i]);
                    }
                    Tensor::from_vec(&[idx.len(), 3, h, w], buf)?
                }
            };

            let penalty = config.l1_coeff as f64 * model.scale_l1();
            let (logits, caches) = model.forward_train(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            let task_loss = loss as f64;
            if !task_loss.is_finite() || !penalty.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, task_loss });
            }
            let k = model.classes;
            for (row, &label) in logits.data().chunks_exact(k).zip(&labels) {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, v)| if *v > row[best] { i } else { best });
                correct += (arg == label) as usize;
            }
            steps.push(StepRecord {
                epoch,
                step,
                task_loss,
                penalty,
                total_loss: task_loss + penalty,
            });
            task_sum += task_loss;
            pen_sum += penalty;

            let grads = model.backward(&caches, &grad, config.l1_coeff)?;
            let grad_slices = grads.iter().flat_map(|g| g.slices());
            for ((p, g), v) in model.params_mut().into_iter().zip(grad_slices).zip(&mut velocity) {
                sgd_step(p, g, v, lr, config.momentum)?;
            }
        }

        let n = steps_per_epoch as f64;
        epochs.push(EpochMetrics {
            epoch,
            task_loss: task_sum / n,
            penalty: pen_sum / n,
            total_loss: (task_sum + pen_sum) / n,
            accuracy: correct as f64 / (steps_per_epoch * config.batch_size) as f64,
            sum_abs_scale: model.scale_l1(),
        });
    }
    Ok(TrainOutcome { model, epochs, steps })
}

/// Writes `epoch,task_loss,penalty,total_loss,accuracy,sum_abs_scale`.
pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    if metrics.is_empty() {
        w.write_record(["epoch", "task_loss", "penalty", "total_loss", "accuracy", "sum_abs_scale"])?;
    }
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Counts of `|scale|` per half-open bin `[edges[i], edges[i+1])`. Values
/// outside `[edges[0], edges[last])` land in `underflow` / `overflow`, so
/// the three always add up to the channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl ScaleHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

fn abs_scales(model: &ModelGraph) -> Result<Vec<f64>, TrainError> {
    let v: Vec<f64> = model
        .batchnorm_layers()
        .flat_map(|(_, bn)| bn.scale.iter().map(|s| s.abs() as f64))
        .collect();
    if model.batchnorm_layers().next().is_none() {
        return Err(TrainError::NoBatchNorm);
    }
    Ok(v)
}

pub fn scale_histogram(model: &ModelGraph, edges: &[f64]) -> Result<ScaleHistogram, TrainError> {
    if edges.len() < 2 || edges.windows(2).any(|e| !(e[0] < e[1])) {
        return Err(TrainError::Config("bin edges must be strictly increasing, at least two".into()));
    }
    let mut h = ScaleHistogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for v in abs_scales(model)? {
        if v < edges[0] {
            h.underflow += 1;
        } else if v >= edges[edges.len() - 1] {
            h.overflow += 1;
        } else {
            // Last edge <= v, so the bin index is one less.
            let bin = edges.partition_point(|&e| e <= v) - 1;
            h.counts[bin] += 1;
        }
    }
    Ok(h)
}

/// Median of `|scale|` over every batch-norm channel (mean of the two
/// middle values for an even count).
pub fn median_abs_scale(model: &ModelGraph) -> Result<f64, TrainError> {
    let mut v = abs_scales(model)?;
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return Err(TrainError::NoBatchNorm);
    }
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Number of batch-norm channels with `|scale| < threshold`.
pub fn count_below(model: &ModelGraph, threshold: f64) -> Result<usize, TrainError> {
    Ok(abs_scales(model)?.into_iter().filter(|&v| v < threshold).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::generate_dataset;
    use crate::model::{build_model, parse_description, Layer};

    fn small() -> (ModelGraph, Dataset) {
        let m = build_model(
            &parse_description(
                r#"
                input = [3, 16, 16]
                classes = 3
                [[layers]]
                kind = "cbr"
                out = 4
                padding = 1
                [[layers]]
                kind = "maxpool"
                size = 4
                [[layers]]
                kind = "cbr"
                out = 6
                padding = 1
                [[layers]]
                kind = "globalavgpool"
                [[layers]]
                kind = "linear"
                out = 3
                "#,
            )
            .unwrap(),
        )
        .unwrap();
        (m, generate_dataset(2, 12, 3, 16, 3).unwrap().train)
    }

    fn cfg(epochs: usize, l1: f32) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr: 0.05,
            momentum: 0.9,
            l1_coeff: l1,
            seed: 7,
            schedule: LrSchedule::Constant,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 0.0).validate().is_err());
        assert!(TrainConfig { batch_size: 1, ..cfg(1, 0.0) }.validate().is_err());
        assert!(cfg(1, f32::NAN).validate().is_err());
        assert!(cfg(1, -1.0).validate().is_err());
        let c = TrainConfig {
            schedule: LrSchedule::StepDecay { step: 2, gamma: 0.5 },
            ..cfg(1, 0.0)
        };
        assert_eq!(c.lr_at(0), 0.05);
        assert_eq!(c.lr_at(3), 0.025);
        assert_eq!(c.lr_at(4), 0.0125);
    }

    #[test]
    fn total_is_task_plus_penalty() {
        let (m, d) = small();
        let out = train(&m, &d, &cfg(1, 0.01)).unwrap();
        let first = out.steps[0];
        let manual = 0.01f32 as f64 * m.scale_l1();
        assert!((first.penalty - manual).abs() <= 1e-12);
        assert!((first.total_loss - (first.task_loss + manual)).abs() <= 1e-6);
        assert_eq!(out.steps.len(), 3);
    }

    #[test]
    fn deterministic_under_seed() {
        let (m, d) = small();
        let a = train(&m, &d, &cfg(2, 1e-3)).unwrap();
        let b = train(&m, &d, &cfg(2, 1e-3)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn errors() {
        let (m, d) = small();
        let empty = Dataset { samples: vec![] };
        assert!(matches!(train(&m, &empty, &cfg(1, 0.0)), Err(TrainError::EmptyDataset)));
        let mut bad = d.clone();
        bad.samples[2].label = 5;
        assert!(matches!(
            train(&m, &bad, &cfg(1, 0.0)),
            Err(TrainError::LabelOutOfRange { index: 2, .. })
        ));
        let other = generate_dataset(2, 12, 3, 20, 3).unwrap().train;
        assert!(train(&m, &other, &cfg(1, 0.0)).is_err());
        let mut nan = m.clone();
        if let Layer::Conv(p) = &mut nan.layers[0] {
            p.weights.data_mut()[0] = f32::NAN;
        }
        assert!(matches!(train(&nan, &d, &cfg(1, 0.0)), Err(TrainError::NonFiniteLoss { .. })));
    }

    #[test]
    fn histogram_bins_and_conservation() {
        let (m, _) = small();
        let h = scale_histogram(&m, &[0.0, 0.4, 0.6, 1.0]).unwrap();
        assert_eq!(h.counts, vec![0, 10, 0]);
        assert_eq!(h.total(), m.batchnorm_channel_counts().iter().sum::<usize>());
        let h = scale_histogram(&m, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(h.counts, vec![0, 10]);
        assert!(scale_histogram(&m, &[0.0]).is_err());
        assert_eq!(median_abs_scale(&m).unwrap(), 0.5);
        let no_bn = ModelGraph {
            layers: vec![Layer::GlobalAvgPool],
            ..m
        };
        assert!(matches!(scale_histogram(&no_bn, &[0.0, 1.0]), Err(TrainError::NoBatchNorm)));
    }

    #[test]
    fn metrics_csv_header() {
        let mut buf = Vec::new();
        write_metrics_csv(
            &[EpochMetrics {
                epoch: 0,
                task_loss: 1.0,
                penalty: 0.5,
                total_loss: 1.5,
                accuracy: 0.25,
                sum_abs_scale: 5.0,
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,task_loss,penalty,total_loss,accuracy,sum_abs_scale\n0,1.0,0.5,1.5,0.25,5.0"));
    }
}
