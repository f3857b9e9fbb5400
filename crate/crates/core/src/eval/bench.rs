use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::EvalError;
use crate::model::{InputShape, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    /// Seconds per timed repetition, warmup excluded.
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `samples`.
    pub std: f64,
    pub warmup: usize,
    /// Rayon pool size the forwards ran on.
    pub threads: usize,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>, warmup: usize, threads: usize) -> Result<Self, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::ZeroReps);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean: mean.clamp(
                samples.iter().copied().fold(f64::INFINITY, f64::min),
                samples.iter().copied().fold(0.0, f64::max),
            ),
            std: var.sqrt(),
            samples,
            warmup,
            threads,
        })
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }
}

/// Times single-image eval-mode forwards on a fixed random input.
pub fn measure_latency(
    model: &ModelGraph,
    input: InputShape,
    reps: usize,
    warmup: usize,
) -> Result<LatencyStats, EvalError> {
    if reps == 0 {
        return Err(EvalError::ZeroReps);
    }
    let x = Tensor::randn(&input.batch(1), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    for _ in 0..warmup {
        model.forward(&x)?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let y = model.forward(&x)?;
        std::hint::black_box(y);
        samples.push(t.elapsed().as_secs_f64().max(1e-9));
    }
    LatencyStats::from_samples(samples, warmup, rayon::current_num_threads())
}

/// On-disk size in bytes.
pub fn model_volume(path: impl AsRef<Path>) -> Result<u64, EvalError> {
    let path = path.as_ref();
    fs::metadata(path)
        .map(|m| m.len())
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
}
