//! 3x3, stride-1, zero-padding-1 convolution lowered to GEMM via im2col.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T = f32> {
    /// `[out_ch, in_ch, 3, 3]`
    pub weights: Tensor<T>,
    /// `[out_ch]`
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> ConvLayerParams<T> {
    pub fn new(weights: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let (out_ch, _, kh, kw) = weights.dims4()?;
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::invalid(format!(
                "only 3x3 kernels are supported, got {kh}x{kw}"
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [out_ch] {
                return Err(Error::Shape {
                    context: "conv bias",
                    expected: vec![out_ch],
                    actual: b.shape().to_vec(),
                });
            }
        }
        Ok(ConvLayerParams { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels() {
            return Err(Error::Shape {
                context: "conv2d input channels",
                expected: vec![self.in_channels()],
                actual: vec![c],
            });
        }
        Ok((n, c, h, w))
    }
}

/// Unfold one `[C, H, W]` image into `[C*9, H*W]` columns.
fn im2col<T: Element>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Fold `[C*9, H*W]` column gradients back onto `[C, H, W]`, accumulating.
fn col2im<T: Element>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(input: &Tensor<T>, params: &ConvLayerParams<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = params.check_input(input)?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("conv2d input has an empty spatial extent"));
    }
    let out_ch = params.out_channels();
    let hw = h * w;
    let k = c * TAPS;
    let mut out = Tensor::zeros(&[n, out_ch, h, w]);
    let mut cols = vec![T::zero(); k * hw];
    let wts = params.weights.data();
    for b in 0..n {
        im2col(&input.data()[b * c * hw..(b + 1) * c * hw], c, h, w, &mut cols);
        let dst = &mut out.data_mut()[b * out_ch * hw..(b + 1) * out_ch * hw];
        if let Some(bias) = &params.bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                dst[o * hw..(o + 1) * hw].fill(bv);
            }
        }
        T::gemm(out_ch, k, hw, T::one(), wts, k, 1, &cols, hw, 1, T::one(), dst, hw, 1);
    }
    Ok(out)
}

/// Gradients of a conv layer given the upstream gradient and the input seen in the forward pass.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    cached_input: Option<&Tensor<T>>,
    params: &ConvLayerParams<T>,
) -> Result<ConvGrads<T>> {
    let input = cached_input.ok_or(Error::MissingCache("conv2d"))?;
    let (n, c, h, w) = params.check_input(input)?;
    let out_ch = params.out_channels();
    if grad_out.shape() != [n, out_ch, h, w] {
        return Err(Error::Shape {
            context: "conv2d grad_out",
            expected: vec![n, out_ch, h, w],
            actual: grad_out.shape().to_vec(),
        });
    }
    let hw = h * w;
    let k = c * TAPS;
    let wts = params.weights.data();
    let mut grad_w = Tensor::zeros(params.weights.shape());
    let mut grad_in = Tensor::zeros(input.shape());
    let mut cols = vec![T::zero(); k * hw];
    let mut grad_cols = vec![T::zero(); k * hw];
    for b in 0..n {
        let g = &grad_out.data()[b * out_ch * hw..(b + 1) * out_ch * hw];
        im2col(&input.data()[b * c * hw..(b + 1) * c * hw], c, h, w, &mut cols);
        // dW += dY [out, hw] * cols^T [hw, k]
        T::gemm(out_ch, hw, k, T::one(), g, hw, 1, &cols, 1, hw, T::one(), grad_w.data_mut(), k, 1);
        // dcols = W^T [k, out] * dY [out, hw]
        T::gemm(k, out_ch, hw, T::one(), wts, 1, k, g, hw, 1, T::zero(), &mut grad_cols, hw, 1);
        col2im(&grad_cols, c, h, w, &mut grad_in.data_mut()[b * c * hw..(b + 1) * c * hw]);
    }
    let grad_b = params.bias.as_ref().map(|_| {
        let mut gb = Tensor::zeros(&[out_ch]);
        for b in 0..n {
            for o in 0..out_ch {
                let s: T = grad_out.data()[(b * out_ch + o) * hw..(b * out_ch + o + 1) * hw]
                    .iter()
                    .copied()
                    .sum();
                gb.data_mut()[o] = gb.data()[o] + s;
            }
        }
        gb
    });
    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}
