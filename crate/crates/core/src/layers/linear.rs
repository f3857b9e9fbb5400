use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T = f32> {
    /// `out x in`.
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearParams<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>) -> Result<Self, TensorError> {
        let (o, i) = weights.nf()?;
        if o == 0 || i == 0 {
            return Err(TensorError::InvalidArgument("linear extents must be positive".into()));
        }
        if bias.len() != o {
            return Err(TensorError::LengthMismatch {
                shape: vec![o],
                len: bias.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }
}

pub fn linear_forward<T: Real>(input: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>, TensorError> {
    let (n, f) = input.nf()?;
    let (o, i) = (p.out_features(), p.in_features());
    if f != i {
        return Err(TensorError::ChannelMismatch { expected: i, actual: f });
    }
    let x = input.data();
    let w = p.weights.data();
    let mut out = Tensor::zeros(&[n, o]);
    for (row, xr) in out.data_mut().chunks_mut(o).zip(x.chunks(i)) {
        for (j, y) in row.iter_mut().enumerate() {
            let dot: T = w[j * i..(j + 1) * i].iter().zip(xr).map(|(&a, &b)| a * b).sum();
            *y = dot + p.bias[j];
        }
    }
    Ok(out)
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    p: &LinearParams<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>, TensorError> {
    let (n, f) = input.nf()?;
    let (o, i) = (p.out_features(), p.in_features());
    if f != i {
        return Err(TensorError::ChannelMismatch { expected: i, actual: f });
    }
    grad_out.expect_shape(&[n, o])?;
    let x = input.data();
    let w = p.weights.data();
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); n * i];
    let mut gw = vec![T::zero(); o * i];
    let mut gb = vec![T::zero(); o];
    for b in 0..n {
        let xr = &x[b * i..(b + 1) * i];
        let gxr = &mut gx[b * i..(b + 1) * i];
        for j in 0..o {
            let g = gy[b * o + j];
            gb[j] += g;
            let wr = &w[j * i..(j + 1) * i];
            let gwr = &mut gw[j * i..(j + 1) * i];
            for k in 0..i {
                gwr[k] += g * xr[k];
                gxr[k] += g * wr[k];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(&[n, i], gx)?,
        weights: Tensor::from_vec(&[o, i], gw)?,
        bias: gb,
    })
}
