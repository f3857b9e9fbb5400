use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs a different element count than {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("channel mismatch: layer expects {expected} channels, input has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("extent {extent} with kernel {kernel}, stride {stride}, padding {padding} gives a non-integral output size")]
    NonIntegralExtent {
        extent: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("train-mode batch norm needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model has no layers")]
    Empty,
    #[error("layer {layer}: expects {expected} input channels but receives {actual}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unknown layer kind `{0}`")]
    UnknownKind(String),
    #[error("layer {layer}: {msg}")]
    InvalidLayer { layer: usize, msg: String },
    #[error("model description: {0}")]
    Description(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: not a model file")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty or smaller than one batch")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}, step {step} (task loss {task_loss})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        task_loss: f64,
    },
    #[error("model has no batch-norm layers")]
    NoBatchNorm,
    #[error("sample {index} has label {label}, model has {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("metrics csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("model has no batch-norm layers")]
    NoBatchNorm,
    #[error("prune ratio {0} outside [0, 1)")]
    InvalidRatio(f64),
    #[error("scale list is empty")]
    EmptyScales,
    #[error("plan was built for model {plan} but this model hashes to {model}")]
    HashMismatch { plan: String, model: String },
    #[error("plan would remove every channel of layer {0}")]
    EmptiesLayer(usize),
    #[error("batch-norm layer {layer} cannot be pruned: {reason}")]
    Unprunable { layer: usize, reason: String },
    #[error("plan does not match model: {0}")]
    PlanMismatch(String),
    #[error("unknown prune method `{0}` (expected `normal` or `regular`)")]
    UnknownMethod(String),
    #[error("plan text: {0}")]
    PlanText(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("factor must be positive, got {0}")]
    NonPositiveFactor(f32),
    #[error("angle range must be non-negative, got {0}")]
    NegativeAngle(f32),
    #[error("scale set is empty or contains zero")]
    BadScaleSet,
    #[error("probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("image extents must be at least 1x1")]
    EmptyImage,
    #[error("ppm: {0}")]
    Ppm(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("degenerate dataset request: {0}")]
    Degenerate(String),
    #[error("latency measurement needs at least one repetition")]
    ZeroReps,
    #[error("annotations line {line}: {msg}")]
    Annotation { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// Crate-wide error for callers that drive several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
