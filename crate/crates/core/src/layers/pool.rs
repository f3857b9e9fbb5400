//! Max pooling (square window, stride = window, floor semantics) and
//! global average pooling.

use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

/// Output extents of a `size x size` max pool; trailing rows and columns
/// that do not fill a window are dropped.
pub fn maxpool_extent(h: usize, w: usize, size: usize) -> Result<(usize, usize), TensorError> {
    if size == 0 {
        return Err(TensorError::InvalidArgument("pool size must be positive".into()));
    }
    if h < size || w < size {
        return Err(TensorError::InvalidArgument(format!(
            "{h}x{w} input is smaller than the {size}x{size} pool window"
        )));
    }
    Ok((h / size, w / size))
}

/// Returns the pooled tensor and, per output element, the flat input index
/// of its maximum (first maximum on ties).
pub fn maxpool_forward<T: Real>(input: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let (n, c, h, w) = input.nchw()?;
    let (oh, ow) = maxpool_extent(h, w, size)?;
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let y = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = base + (oy * size + ky) * w + ox * size + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                y[o] = x[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    if argmax.len() != grad_out.len() {
        return Err(TensorError::LengthMismatch {
            shape: grad_out.shape().to_vec(),
            len: argmax.len(),
        });
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(gx)
}

/// `N x C x H x W -> N x C`.
pub fn global_avg_pool_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = input.nchw()?;
    let hw = h * w;
    let denom = T::from_count(hw);
    let data = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        other => {
            return Err(TensorError::Rank {
                expected: 4,
                shape: other.to_vec(),
            })
        }
    };
    grad_out.expect_shape(&[n, c])?;
    let hw = h * w;
    let denom = T::from_count(hw);
    let mut gx = Tensor::zeros(input_shape);
    for (plane, &g) in gx.data_mut().chunks_mut(hw).zip(grad_out.data()) {
        plane.fill(g / denom);
    }
    Ok(gx)
}
