//! Central finite-difference gradient checking in `f64`.
//!
//! Every layer is reduced to a scalar through a fixed random projection
//! `L = sum(y * r)` (cross-entropy is already scalar), then each input and
//! parameter entry is differentiated with the fourth-order central stencil
//! at `+-FD_STEP` and `+-2 FD_STEP`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::{relu_backward, relu_forward};
use super::batchnorm::{batchnorm_backward, batchnorm_forward_train, BnParams};
use super::conv::{conv2d_backward, conv2d_forward, ConvParams};
use super::linear::{linear_backward, linear_forward, LinearParams};
use super::loss::softmax_cross_entropy;
use super::pool::{global_avg_pool_backward, global_avg_pool_forward, maxpool_backward, maxpool_forward};
use crate::error::TensorError;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub enum LayerUnderTest {
    Conv(ConvParams<f64>),
    /// Train mode; `l1` adds `l1 * sum(|scale|)` to the probed loss.
    BatchNorm { params: BnParams<f64>, l1: f64 },
    Relu,
    MaxPool(usize),
    GlobalAvgPool,
    Linear(LinearParams<f64>),
    SoftmaxCrossEntropy(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub within_tolerance: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of `loss` at `values`.
pub fn max_relative_error(values: &mut [f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(values.len(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..values.len() {
        let orig = values[i];
        let mut at = |offset: f64| {
            values[i] = orig + offset;
            loss(values)
        };
        let near = at(FD_STEP) - at(-FD_STEP);
        let far = at(2.0 * FD_STEP) - at(-2.0 * FD_STEP);
        values[i] = orig;
        let numeric = (8.0 * near - far) / (12.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

fn projection(len: usize, salt: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ salt ^ (len as u64).wrapping_mul(0x9e37_79b9));
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn project(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).expect("shape preserved")
}

/// Checks every input and parameter gradient of `layer` at `input`.
pub fn gradient_check(layer: &LayerUnderTest, input: &Tensor<f64>, tolerance: f64) -> Result<GradCheck, TensorError> {
    let shape = input.shape().to_vec();
    let mut x = input.data().to_vec();
    let worst = match layer {
        LayerUnderTest::Conv(p) => {
            let y = conv2d_forward(input, p)?;
            let r = projection(y.len(), 1);
            let g = conv2d_backward(input, p, &with_data(y.shape(), &r))?;
            let mut worst = max_relative_error(&mut x, g.input.data(), |v| {
                project(&conv2d_forward(&with_data(&shape, v), p).unwrap(), &r)
            });
            let mut w = p.weights.data().to_vec();
            worst = worst.max(max_relative_error(&mut w, g.weights.data(), |v| {
                let mut q = p.clone();
                q.weights = with_data(p.weights.shape(), v);
                project(&conv2d_forward(input, &q).unwrap(), &r)
            }));
            let mut b = p.bias.clone();
            worst.max(max_relative_error(&mut b, &g.bias, |v| {
                let mut q = p.clone();
                q.bias = v.to_vec();
                project(&conv2d_forward(input, &q).unwrap(), &r)
            }))
        }
        LayerUnderTest::BatchNorm { params, l1 } => {
            let l1 = *l1;
            let eval = |x: &Tensor<f64>, bn: &BnParams<f64>, r: &[f64]| {
                let mut bn = bn.clone();
                let (y, _) = batchnorm_forward_train(x, &mut bn).unwrap();
                project(&y, r) + l1 * bn.scale.iter().map(|s| s.abs()).sum::<f64>()
            };
            let mut scratch = params.clone();
            let (y, cache) = batchnorm_forward_train(input, &mut scratch)?;
            let r = projection(y.len(), 2);
            let g = batchnorm_backward(&cache, &with_data(y.shape(), &r), l1)?;
            let mut worst = max_relative_error(&mut x, g.input.data(), |v| eval(&with_data(&shape, v), params, &r));
            let mut s = params.scale.clone();
            worst = worst.max(max_relative_error(&mut s, &g.scale, |v| {
                let mut q = params.clone();
                q.scale = v.to_vec();
                eval(input, &q, &r)
            }));
            let mut t = params.shift.clone();
            worst.max(max_relative_error(&mut t, &g.shift, |v| {
                let mut q = params.clone();
                q.shift = v.to_vec();
                eval(input, &q, &r)
            }))
        }
        LayerUnderTest::Relu => {
            let y = relu_forward(input);
            let r = projection(y.len(), 3);
            let g = relu_backward(input, &with_data(y.shape(), &r))?;
            max_relative_error(&mut x, g.data(), |v| project(&relu_forward(&with_data(&shape, v)), &r))
        }
        LayerUnderTest::MaxPool(size) => {
            let (y, idx) = maxpool_forward(input, *size)?;
            let r = projection(y.len(), 4);
            let g = maxpool_backward(&shape, &idx, &with_data(y.shape(), &r))?;
            max_relative_error(&mut x, g.data(), |v| {
                project(&maxpool_forward(&with_data(&shape, v), *size).unwrap().0, &r)
            })
        }
        LayerUnderTest::GlobalAvgPool => {
            let y = global_avg_pool_forward(input)?;
            let r = projection(y.len(), 5);
            let g = global_avg_pool_backward(&shape, &with_data(y.shape(), &r))?;
            max_relative_error(&mut x, g.data(), |v| {
                project(&global_avg_pool_forward(&with_data(&shape, v)).unwrap(), &r)
            })
        }
        LayerUnderTest::Linear(p) => {
            let y = linear_forward(input, p)?;
            let r = projection(y.len(), 6);
            let g = linear_backward(input, p, &with_data(y.shape(), &r))?;
            let mut worst = max_relative_error(&mut x, g.input.data(), |v| {
                project(&linear_forward(&with_data(&shape, v), p).unwrap(), &r)
            });
            let mut w = p.weights.data().to_vec();
            worst = worst.max(max_relative_error(&mut w, g.weights.data(), |v| {
                let mut q = p.clone();
                q.weights = with_data(p.weights.shape(), v);
                project(&linear_forward(input, &q).unwrap(), &r)
            }));
            let mut b = p.bias.clone();
            worst.max(max_relative_error(&mut b, &g.bias, |v| {
                let mut q = p.clone();
                q.bias = v.to_vec();
                project(&linear_forward(input, &q).unwrap(), &r)
            }))
        }
        LayerUnderTest::SoftmaxCrossEntropy(labels) => {
            let (_, g) = softmax_cross_entropy(input, labels)?;
            max_relative_error(&mut x, g.data(), |v| softmax_cross_entropy(&with_data(&shape, v), labels).unwrap().0)
        }
    };
    Ok(GradCheck {
        max_relative_error: worst,
        within_tolerance: worst <= tolerance,
    })
}

/// Layer kinds with a random-case generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    MaxPool,
    GlobalAvgPool,
    Linear,
    SoftmaxCrossEntropy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv,
        LayerKind::BatchNorm,
        LayerKind::Relu,
        LayerKind::MaxPool,
        LayerKind::GlobalAvgPool,
        LayerKind::Linear,
        LayerKind::SoftmaxCrossEntropy,
    ];
}

/// A small random layer and input. Relu inputs stay at least 0.05 from
/// the kink and max-pool inputs are spaced so no perturbation flips an
/// argmax.
pub fn random_case(kind: LayerKind, seed: u64) -> (LayerUnderTest, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LayerKind::Conv => {
            let stride = 1 + (seed % 2) as usize;
            let h = if stride == 1 { 5 } else { 7 };
            let p = ConvParams::new(
                Tensor::randn(&[3, 2, 3, 3], 0.5, &mut rng),
                (0..3).map(|_| rng.random_range(-0.5..0.5)).collect(),
                stride,
                1,
            )
            .expect("valid conv");
            (LayerUnderTest::Conv(p), Tensor::randn(&[2, 2, h, h], 1.0, &mut rng))
        }
        LayerKind::BatchNorm => {
            let mut bn = BnParams::new(3, 0.0);
            bn.scale = (0..3).map(|_| rng.random_range(0.2..1.5)).collect();
            bn.shift = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            (
                LayerUnderTest::BatchNorm { params: bn, l1: 0.0 },
                Tensor::randn(&[4, 3, 3, 3], 1.5, &mut rng),
            )
        }
        LayerKind::Relu => {
            let data = (0..2 * 3 * 4 * 4)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..2.0);
                    if rng.random_bool(0.5) { v } else { -v }
                })
                .collect();
            (LayerUnderTest::Relu, Tensor::from_vec(&[2, 3, 4, 4], data).unwrap())
        }
        LayerKind::MaxPool => {
            let len = 2 * 2 * 6 * 6;
            let mut data: Vec<f64> = (0..len).map(|i| i as f64 * 0.01 - 1.0).collect();
            data.shuffle(&mut rng);
            (LayerUnderTest::MaxPool(2), Tensor::from_vec(&[2, 2, 6, 6], data).unwrap())
        }
        LayerKind::GlobalAvgPool => (LayerUnderTest::GlobalAvgPool, Tensor::randn(&[2, 3, 4, 5], 1.0, &mut rng)),
        LayerKind::Linear => {
            let p = LinearParams::new(
                Tensor::randn(&[4, 6], 0.5, &mut rng),
                (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
            )
            .expect("valid linear");
            (LayerUnderTest::Linear(p), Tensor::randn(&[3, 6], 1.0, &mut rng))
        }
        LayerKind::SoftmaxCrossEntropy => {
            let labels = (0..4).map(|_| rng.random_range(0..5)).collect();
            (
                LayerUnderTest::SoftmaxCrossEntropy(labels),
                Tensor::randn(&[4, 5], 2.0, &mut rng),
            )
        }
    }
}
