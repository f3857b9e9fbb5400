use std::fs;
use std::path::Path;

use crate::error::{FormatError, PruneError};
use crate::model::{count_flops, count_params, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelStats {
    pub params: usize,
    pub flops: u64,
    pub bytes: u64,
}

/// Channel count of one batch-norm layer before and after pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerChannels {
    pub bn_layer: usize,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub before: ModelStats,
    pub after: ModelStats,
    /// `after.bytes / before.bytes`: the fraction of the file that remains.
    pub ratio: f64,
    pub layers: Vec<LayerChannels>,
}

/// Remaining-size fraction, `after / before`.
pub fn compression_ratio(before_bytes: f64, after_bytes: f64) -> f64 {
    after_bytes / before_bytes
}

fn stats(model: &ModelGraph, path: &Path) -> Result<ModelStats, PruneError> {
    let bytes = fs::metadata(path)
        .map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .len();
    Ok(ModelStats {
        params: count_params(model),
        flops: count_flops(model, model.input)?,
        bytes,
    })
}

/// Compares two saved models. The per-layer table pairs batch-norm layers
/// by position.
pub fn compression_report(
    before: &ModelGraph,
    before_path: impl AsRef<Path>,
    after: &ModelGraph,
    after_path: impl AsRef<Path>,
) -> Result<CompressionReport, PruneError> {
    let b = stats(before, before_path.as_ref())?;
    let a = stats(after, after_path.as_ref())?;
    if b.bytes == 0 {
        return Err(FormatError::Malformed("baseline model file is empty".into()).into());
    }
    let before_bn: Vec<(usize, usize)> = before.batchnorm_layers().map(|(i, l)| (i, l.channels())).collect();
    let after_bn: Vec<usize> = after.batchnorm_layers().map(|(_, l)| l.channels()).collect();
    if before_bn.len() != after_bn.len() {
        return Err(PruneError::PlanMismatch(format!(
            "models have {} and {} batch-norm layers",
            before_bn.len(),
            after_bn.len()
        )));
    }
    let layers = before_bn
        .iter()
        .zip(&after_bn)
        .map(|(&(bn_layer, before), &after)| LayerChannels { bn_layer, before, after })
        .collect();
    Ok(CompressionReport {
        before: b,
        after: a,
        ratio: compression_ratio(b.bytes as f64, a.bytes as f64),
        layers,
    })
}
