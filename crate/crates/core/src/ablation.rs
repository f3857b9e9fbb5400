//! Augmentation ablation: one training run per method, prefix combinations
//! for the cumulative column, and a run with every listed method.

use std::io::Write;

use serde::Serialize;

use crate::augment::{AugmentConfig, Augmenter, Method};
use crate::error::TrainError;
use crate::eval::{classify_accuracy, DatasetSplits};
use crate::model::ModelGraph;
use crate::train::{train_with, TrainConfig};

/// Name of the metric column. The ablation scores test accuracy in percent.
pub const ABLATION_METRIC: &str = "accuracy";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub approach: String,
    /// Test accuracy in percent.
    pub metric: f64,
    /// `metric - baseline`, rounded to 2 decimals.
    pub delta: f64,
    /// Gain of this method together with every method listed before it.
    pub cumulative_delta: f64,
}

fn round2(v: f64) -> f64 {
    // Adding 0.0 turns -0.0 into 0.0.
    (v * 100.0).round() / 100.0 + 0.0
}

fn score(
    model: &ModelGraph,
    data: &DatasetSplits,
    train: &TrainConfig,
    augment: &AugmentConfig,
    methods: &[Method],
) -> Result<f64, TrainError> {
    let aug = if methods.is_empty() {
        None
    } else {
        Some(Augmenter::new(AugmentConfig {
            enabled: methods.to_vec(),
            ..augment.clone()
        })?)
    };
    let out = train_with(model, &data.train, train, aug.as_ref())?;
    Ok(100.0 * classify_accuracy(&out.model, &data.test)?)
}

/// Rows: `baseline`, one per method in `methods` order, then `cumulative`
/// (all methods together). Every run starts from `model` with the same
/// training seed; only the augmentation differs.
pub fn run_ablation(
    model: &ModelGraph,
    data: &DatasetSplits,
    train: &TrainConfig,
    augment: &AugmentConfig,
    methods: &[Method],
) -> Result<Vec<AblationRow>, TrainError> {
    if methods.is_empty() {
        return Err(TrainError::Config("ablation needs at least one augmentation method".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(TrainError::Config(format!("method `{}` listed twice", m.name())));
        }
    }
    let base = score(model, data, train, augment, &[])?;
    let row = |approach: &str, metric: f64, prefix: f64| AblationRow {
        approach: approach.to_string(),
        metric: round2(metric),
        delta: round2(round2(metric) - round2(base)),
        cumulative_delta: round2(round2(prefix) - round2(base)),
    };
    let mut rows = vec![row("baseline", base, base)];
    let mut prefix = base;
    for (i, &m) in methods.iter().enumerate() {
        let single = score(model, data, train, augment, &[m])?;
        prefix = match i {
            0 => single,
            _ => score(model, data, train, augment, &methods[..=i])?,
        };
        rows.push(row(m.name(), single, prefix));
    }
    rows.push(row("cumulative", prefix, prefix));
    Ok(rows)
}

/// Writes `approach,accuracy,delta,cumulative_delta` with 2 decimals.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["approach", ABLATION_METRIC, "delta", "cumulative_delta"])?;
    for r in rows {
        w.write_record([
            r.approach.clone(),
            format!("{:.2}", r.metric),
            format!("{:+.2}", r.delta),
            format!("{:+.2}", r.cumulative_delta),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
