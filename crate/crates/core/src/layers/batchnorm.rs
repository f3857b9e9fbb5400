//! Per-channel batch normalization with an L1 subgradient on the scale.
//!
//! `y = scale * (x - mean) / sqrt(var + tau) + shift`, where train mode uses
//! the biased statistics of the current batch and eval mode uses the
//! running statistics.

use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_TAU: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T = f32> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Stabilizer added to the variance.
    pub tau: T,
    /// Weight of the current batch in the running-stat moving average.
    pub momentum: T,
}

impl<T: Real> BnParams<T> {
    /// Scale `init_scale`, shift 0, running mean 0, running variance 1.
    pub fn new(channels: usize, init_scale: T) -> Self {
        Self {
            scale: vec![init_scale; channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            tau: T::lit(DEFAULT_TAU),
            momentum: T::lit(DEFAULT_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let c = self.channels();
        if c == 0 {
            return Err(TensorError::InvalidArgument("batch norm needs at least one channel".into()));
        }
        for (name, v) in [
            ("shift", &self.shift),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != c {
                return Err(TensorError::InvalidArgument(format!(
                    "{name} has {} entries, scale has {c}",
                    v.len()
                )));
            }
        }
        if self.running_var.iter().any(|&v| v < T::zero()) {
            return Err(TensorError::InvalidArgument("running variance must be non-negative".into()));
        }
        if self.tau.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(TensorError::InvalidArgument("tau must be positive".into()));
        }
        Ok(())
    }

    /// Keep only the channels whose mask entry is `true`.
    pub fn select(&self, keep: &[bool]) -> Self {
        let pick = |v: &[T]| -> Vec<T> {
            v.iter()
                .zip(keep)
                .filter_map(|(&x, &k)| k.then_some(x))
                .collect()
        };
        Self {
            scale: pick(&self.scale),
            shift: pick(&self.shift),
            running_mean: pick(&self.running_mean),
            running_var: pick(&self.running_var),
            tau: self.tau,
            momentum: self.momentum,
        }
    }
}

/// Values saved by a train-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T = f32> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    scale: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T = f32> {
    pub input: Tensor<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

fn check<T: Real>(input: &Tensor<T>, bn: &BnParams<T>) -> Result<(usize, usize, usize), TensorError> {
    let (n, c, h, w) = input.nchw()?;
    if c != bn.channels() {
        return Err(TensorError::ChannelMismatch {
            expected: bn.channels(),
            actual: c,
        });
    }
    Ok((n, c, h * w))
}

/// Train-mode forward: normalizes with batch statistics and folds them
/// into the running statistics.
pub fn batchnorm_forward_train<T: Real>(
    input: &Tensor<T>,
    bn: &mut BnParams<T>,
) -> Result<(Tensor<T>, BnCache<T>), TensorError> {
    let (n, c, hw) = check(input, bn)?;
    let count = n * hw;
    if count < 2 {
        return Err(TensorError::DegenerateBatch(count));
    }
    let m = T::from_count(count);
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut normalized = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let planes = || (0..n).map(move |b| (b * c + ch) * hw);
        let mut sum = T::zero();
        for base in planes() {
            for &v in &x[base..base + hw] {
                sum += v;
            }
        }
        let mean = sum / m;
        let mut sq = T::zero();
        for base in planes() {
            for &v in &x[base..base + hw] {
                let d = v - mean;
                sq += d * d;
            }
        }
        let var = sq / m;
        let istd = T::one() / (var + bn.tau).sqrt();
        inv_std[ch] = istd;
        let (s, t) = (bn.scale[ch], bn.shift[ch]);
        for base in planes() {
            for i in base..base + hw {
                let xh = (x[i] - mean) * istd;
                normalized.data_mut()[i] = xh;
                out.data_mut()[i] = s * xh + t;
            }
        }
        let mom = bn.momentum;
        bn.running_mean[ch] = (T::one() - mom) * bn.running_mean[ch] + mom * mean;
        bn.running_var[ch] = (T::one() - mom) * bn.running_var[ch] + mom * var;
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            scale: bn.scale.clone(),
        },
    ))
}

/// Eval-mode forward with the running statistics.
pub fn batchnorm_forward_eval<T: Real>(input: &Tensor<T>, bn: &BnParams<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, hw) = check(input, bn)?;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let y = out.data_mut();
    for ch in 0..c {
        let istd = T::one() / (bn.running_var[ch] + bn.tau).sqrt();
        let (mean, s, t) = (bn.running_mean[ch], bn.scale[ch], bn.shift[ch]);
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                y[i] = s * ((x[i] - mean) * istd) + t;
            }
        }
    }
    Ok(out)
}

/// `sign` with `sign(0) = 0`.
pub fn l1_subgradient<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Exact train-mode gradients; `l1_coeff * sign(scale)` is added to the
/// scale gradient.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
    l1_coeff: T,
) -> Result<BnGrads<T>, TensorError> {
    grad_out.expect_shape(cache.normalized.shape())?;
    let (n, c, h, w) = grad_out.nchw()?;
    let hw = h * w;
    let m = T::from_count(n * hw);
    let gy = grad_out.data();
    let xh = cache.normalized.data();
    let mut grad_input = Tensor::zeros(grad_out.shape());
    let mut g_scale = vec![T::zero(); c];
    let mut g_shift = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sum_g += gy[i];
                sum_gx += gy[i] * xh[i];
            }
        }
        g_shift[ch] = sum_g;
        g_scale[ch] = sum_gx + l1_coeff * l1_subgradient(cache.scale[ch]);
        let k = cache.scale[ch] * cache.inv_std[ch] / m;
        let gx = grad_input.data_mut();
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                gx[i] = k * (m * gy[i] - sum_g - xh[i] * sum_gx);
            }
        }
    }
    Ok(BnGrads {
        input: grad_input,
        scale: g_scale,
        shift: g_shift,
    })
}
