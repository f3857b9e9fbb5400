//! 2-D convolution over NCHW tensors.
//!
//! Two forward kernels are provided: a direct loop kernel kept as the
//! reference, and a patch-matrix kernel (im2col followed by a row-major
//! matrix product) used everywhere else. Both accumulate each output in
//! the same `(in_channel, ky, kx)` order starting from zero and add the
//! bias last, so they agree bit for bit.

use rayon::prelude::*;

use super::gemm::{matmul, transpose};
use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `out_ch x in_ch x kh x kw`.
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn new(
        weights: Tensor<T>,
        bias: Vec<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        let (o, i, kh, kw) = weights.nchw()?;
        if o == 0 || i == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "conv extents must be positive, got {:?}",
                weights.shape()
            )));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("stride must be positive".into()));
        }
        if bias.len() != o {
            return Err(TensorError::LengthMismatch {
                shape: vec![o],
                len: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    /// Output spatial extents for an `h x w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        let (kh, kw) = self.kernel();
        Ok((
            output_extent(h, kh, self.stride, self.padding)?,
            output_extent(w, kw, self.stride, self.padding)?,
        ))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize), TensorError> {
        let (n, c, h, w) = input.nchw()?;
        if c != self.in_channels() {
            return Err(TensorError::ChannelMismatch {
                expected: self.in_channels(),
                actual: c,
            });
        }
        let (oh, ow) = self.output_extent(h, w)?;
        Ok((n, h, w, oh, ow))
    }
}

/// `(extent + 2 * padding - kernel) / stride + 1`, requiring exact division.
pub fn output_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize, TensorError> {
    let err = TensorError::NonIntegralExtent {
        extent,
        kernel,
        stride,
        padding,
    };
    let Some(padded) = padding.checked_mul(2).and_then(|p| p.checked_add(extent)) else {
        return Err(err);
    };
    if stride == 0 || padded < kernel || (padded - kernel) % stride != 0 {
        return Err(err);
    }
    Ok((padded - kernel) / stride + 1)
}

/// Direct loop convolution.
pub fn conv2d_forward_reference<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, h, w, oh, ow) = params.check_input(input)?;
    let (o, c) = (params.out_channels(), params.in_channels());
    let (kh, kw) = params.kernel();
    let (stride, pad) = (params.stride as isize, params.padding as isize);
    let x = input.data();
    let wt = params.weights.data();
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    let y = out.data_mut();
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize * stride + ky as isize - pad;
                                let ix = ox as isize * stride + kx as isize - pad;
                                let v = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    x[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                } else {
                                    T::zero()
                                };
                                acc += wt[((oc * c + ic) * kh + ky) * kw + kx] * v;
                            }
                        }
                    }
                    y[((b * o + oc) * oh + oy) * ow + ox] = acc + params.bias[oc];
                }
            }
        }
    }
    Ok(out)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfold one `c x h x w` image into a `(c*kh*kw) x (oh*ow)` patch matrix.
    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let p = self.cols();
        for ic in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ic * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy as usize >= self.h {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &img[(ic * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix as usize >= self.w {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a patch-matrix gradient back onto image layout.
    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let p = self.cols();
        for ic in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ic * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut img[(ic * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<(usize, Geometry), TensorError> {
    let (n, h, w, oh, ow) = params.check_input(input)?;
    let (kh, kw) = params.kernel();
    Ok((
        n,
        Geometry {
            c: params.in_channels(),
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride: params.stride,
            pad: params.padding,
        },
    ))
}

/// Patch-matrix convolution; parallel over batch items and output channels.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, g) = geometry(input, params)?;
    let o = params.out_channels();
    let (k, p) = (g.rows(), g.cols());
    let img_len = g.c * g.h * g.w;
    let wt = params.weights.data();
    let mut out = Tensor::zeros(&[n, o, g.oh, g.ow]);
    out.data_mut()
        .par_chunks_mut(o * p)
        .zip(input.data().par_chunks(img_len))
        .for_each(|(y, img)| {
            let mut cols = vec![T::zero(); k * p];
            g.im2col(img, &mut cols);
            matmul(wt, &cols, y, o, k, p);
            for (row, &b) in y.chunks_mut(p).zip(&params.bias) {
                for acc in row.iter_mut() {
                    *acc += b;
                }
            }
        });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, TensorError> {
    let (n, g) = geometry(input, params)?;
    let o = params.out_channels();
    grad_out.expect_shape(&[n, o, g.oh, g.ow])?;
    let (k, p) = (g.rows(), g.cols());
    let img_len = g.c * g.h * g.w;
    let wt = params.weights.data();

    let wt_t = transpose(wt, o, k);
    let mut grad_input = Tensor::zeros(input.shape());
    // Per-item weight/bias gradients, reduced afterwards in item order.
    let partials: Vec<(Vec<T>, Vec<T>)> = grad_input
        .data_mut()
        .par_chunks_mut(img_len)
        .zip(input.data().par_chunks(img_len))
        .zip(grad_out.data().par_chunks(o * p))
        .map(|((gx, img), gy)| {
            let mut cols = vec![T::zero(); k * p];
            g.im2col(img, &mut cols);
            let gb: Vec<T> = gy.chunks(p).map(|row| row.iter().copied().sum()).collect();
            // gw = gy * cols^T, gcols = w^T * gy.
            let mut gw = vec![T::zero(); o * k];
            matmul(gy, &transpose(&cols, k, p), &mut gw, o, p, k);
            let mut gcols = vec![T::zero(); k * p];
            matmul(&wt_t, gy, &mut gcols, k, o, p);
            g.col2im(&gcols, gx);
            (gw, gb)
        })
        .collect();

    let mut gw = vec![T::zero(); o * k];
    let mut gb = vec![T::zero(); o];
    for (pw, pb) in &partials {
        for (a, &b) in gw.iter_mut().zip(pw) {
            *a += b;
        }
        for (a, &b) in gb.iter_mut().zip(pb) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: Tensor::from_vec(params.weights.shape(), gw)?,
        bias: gb,
    })
}
