//! Forward and backward kernels for the classifier's layer types.
//!
//! Activations are single-example `[channels, depth, height, width]`
//! tensors. Convolution is cross-correlation lowered to GEMM via im2col.

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

pub type Dims3 = [usize; 3];

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Output spatial size `(d + 2p − k)/s + 1` per axis.
pub fn output_dims(input: Dims3, kernel: Dims3, stride: Dims3, pad: Dims3) -> Result<Dims3> {
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = out_len(input[a], kernel[a], stride[a], pad[a]).ok_or_else(|| Error::InvalidShape {
            shape: input.to_vec(),
            reason: format!("kernel {kernel:?} with pad {pad:?} does not fit"),
        })?;
    }
    Ok(out)
}

fn spatial(x: &Tensor, op: &'static str) -> Result<(usize, Dims3)> {
    match x.shape() {
        &[c, d, h, w] => Ok((c, [d, h, w])),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("{op} expects [channels, depth, height, width]"),
        }),
    }
}

/// Geometry of one 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Dims3,
    pub stride: Dims3,
    pub pad: Dims3,
}

/// Lowered input kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct Im2Col {
    pub cols: Vec<f64>,
    pub input: Dims3,
    pub output: Dims3,
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3d {
    pub fn weight_shape(&self) -> [usize; 5] {
        let [kd, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels, kd, kh, kw]
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn check(&self, x: &Tensor, weight: &[f64], bias: &[f64]) -> Result<Dims3> {
        let (c, dims) = spatial(x, "conv3d")?;
        if c != self.in_channels {
            return Err(Error::shape("conv3d input channels", x.shape(), &[self.in_channels]));
        }
        if weight.len() != self.out_channels * self.patch() || bias.len() != self.out_channels {
            return Err(Error::shape(
                "conv3d parameters",
                &[weight.len(), bias.len()],
                &[self.out_channels * self.patch(), self.out_channels],
            ));
        }
        Ok(dims)
    }

    pub fn im2col(&self, x: &Tensor) -> Result<Im2Col> {
        let (_, input) = spatial(x, "conv3d")?;
        let output = output_dims(input, self.kernel, self.stride, self.pad)?;
        let [d, h, w] = input;
        let [od, oh, ow] = output;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let positions = od * oh * ow;
        let mut cols = vec![0.0; self.patch() * positions];
        let xd = x.data();
        let mut row = 0;
        for c in 0..self.in_channels {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dst = &mut cols[row * positions..(row + 1) * positions];
                        let mut p = 0;
                        for oz in 0..od {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                for ox in 0..ow {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if iz >= 0
                                        && iy >= 0
                                        && ix >= 0
                                        && (iz as usize) < d
                                        && (iy as usize) < h
                                        && (ix as usize) < w
                                    {
                                        dst[p] = xd[((c * d + iz as usize) * h + iy as usize) * w + ix as usize];
                                    }
                                    p += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        Ok(Im2Col { cols, input, output })
    }

    fn col2im(&self, dcols: &[f64], input: Dims3, output: Dims3) -> Tensor {
        let [d, h, w] = input;
        let [od, oh, ow] = output;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let positions = od * oh * ow;
        let mut dx = Tensor::zeros(&[self.in_channels, d, h, w]);
        let out = dx.data_mut();
        let mut row = 0;
        for c in 0..self.in_channels {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = &dcols[row * positions..(row + 1) * positions];
                        let mut p = 0;
                        for oz in 0..od {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                for ox in 0..ow {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if iz >= 0
                                        && iy >= 0
                                        && ix >= 0
                                        && (iz as usize) < d
                                        && (iy as usize) < h
                                        && (ix as usize) < w
                                    {
                                        out[((c * d + iz as usize) * h + iy as usize) * w + ix as usize] += src[p];
                                    }
                                    p += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the lowered input needed by [`Conv3d::backward`].
    pub fn forward(&self, x: &Tensor, weight: &[f64], bias: &[f64]) -> Result<(Tensor, Im2Col)> {
        self.check(x, weight, bias)?;
        let lowered = self.im2col(x)?;
        let positions: usize = lowered.output.iter().product();
        let mut out = Vec::with_capacity(self.out_channels * positions);
        for &b in bias {
            out.extend(std::iter::repeat(b).take(positions));
        }
        gemm(
            self.out_channels,
            self.patch(),
            positions,
            1.0,
            weight,
            &lowered.cols,
            1.0,
            &mut out,
        );
        let [od, oh, ow] = lowered.output;
        let out = Tensor::new(&[self.out_channels, od, oh, ow], out)?;
        Ok((out, lowered))
    }

    /// Gradients of a scalar loss given `grad_out = ∂L/∂output`.
    pub fn backward(
        &self,
        lowered: &Im2Col,
        weight: &[f64],
        grad_out: &Tensor,
        need_input: bool,
    ) -> Result<ConvGrads> {
        let positions: usize = lowered.output.iter().product();
        if grad_out.len() != self.out_channels * positions {
            return Err(Error::shape(
                "conv3d backward",
                grad_out.shape(),
                &[self.out_channels, lowered.output[0], lowered.output[1], lowered.output[2]],
            ));
        }
        let g = grad_out.data();
        let k = self.patch();
        let mut dw = vec![0.0; self.out_channels * k];
        gemm_nt(self.out_channels, positions, k, 1.0, g, &lowered.cols, 0.0, &mut dw);
        let db = g.chunks_exact(positions).map(|c| c.iter().sum()).collect();
        let input = if need_input {
            let mut dcols = vec![0.0; k * positions];
            gemm_tn(k, self.out_channels, positions, 1.0, weight, g, 0.0, &mut dcols);
            Some(self.col2im(&dcols, lowered.input, lowered.output))
        } else {
            None
        };
        Ok(ConvGrads {
            input,
            weight: dw,
            bias: db,
        })
    }
}

fn conv_from_weight(weight: &Tensor, pad: Dims3, stride: Dims3) -> Result<Conv3d> {
    match weight.shape() {
        &[out_channels, in_channels, kd, kh, kw] => Ok(Conv3d {
            in_channels,
            out_channels,
            kernel: [kd, kh, kw],
            stride,
            pad,
        }),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "conv3d weight must be [out, in, kd, kh, kw]".into(),
        }),
    }
}

/// Convolution of a single `[C, D, H, W]` input with a `[O, C, kd, kh, kw]`
/// weight.
pub fn conv3d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, pad: Dims3, stride: Dims3) -> Result<Tensor> {
    let conv = conv_from_weight(weight, pad, stride)?;
    Ok(conv.forward(x, weight.data(), bias.data())?.0)
}

/// Returns `(∂L/∂x, ∂L/∂weight, ∂L/∂bias)`.
pub fn conv3d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    pad: Dims3,
    stride: Dims3,
) -> Result<(Tensor, Tensor, Tensor)> {
    let conv = conv_from_weight(weight, pad, stride)?;
    let lowered = conv.im2col(x)?;
    let g = conv.backward(&lowered, weight.data(), grad_out, true)?;
    Ok((
        g.input.expect("input gradient requested"),
        Tensor::new(weight.shape(), g.weight)?,
        Tensor::new(&[conv.out_channels], g.bias)?,
    ))
}

/// Max pooling geometry. Padded cells behave as −∞ and are never selected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool3d {
    pub kernel: Dims3,
    pub stride: Dims3,
    pub pad: Dims3,
}

impl MaxPool3d {
    pub fn output_dims(&self, input: Dims3) -> Result<Dims3> {
        if (0..3).any(|a| self.pad[a] >= self.kernel[a]) {
            return Err(Error::Config(format!(
                "pool padding {:?} must be smaller than kernel {:?}",
                self.pad, self.kernel
            )));
        }
        output_dims(input, self.kernel, self.stride, self.pad)
    }

    /// Pooled output plus, for every output cell, the flat input index of
    /// its maximum.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (c, input) = spatial(x, "maxpool3d")?;
        let [od, oh, ow] = self.output_dims(input)?;
        let [d, h, w] = input;
        let xd = x.data();
        let mut out = Vec::with_capacity(c * od * oh * ow);
        let mut arg = Vec::with_capacity(out.capacity());
        for ch in 0..c {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for kz in 0..self.kernel[0] {
                            let iz = (oz * self.stride[0] + kz) as isize - self.pad[0] as isize;
                            if iz < 0 || iz as usize >= d {
                                continue;
                            }
                            for ky in 0..self.kernel[1] {
                                let iy = (oy * self.stride[1] + ky) as isize - self.pad[1] as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..self.kernel[2] {
                                    let ix = (ox * self.stride[2] + kx) as isize - self.pad[2] as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    let idx = ((ch * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                    if best_idx == usize::MAX || xd[idx] > best {
                                        best = xd[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        arg.push(best_idx);
                    }
                }
            }
        }
        Ok((Tensor::new(&[c, od, oh, ow], out)?, arg))
    }

    /// Routes each output gradient to the input cell that won the forward max.
    pub fn backward(&self, input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
        if argmax.len() != grad_out.len() {
            return Err(Error::shape("maxpool3d backward", &[argmax.len()], grad_out.shape()));
        }
        let mut dx = Tensor::zeros(input_shape);
        let out = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(grad_out.data()) {
            out[i] += g;
        }
        Ok(dx)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where the pre-activation was strictly positive.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre.shape(), data).expect("shapes match")
}

/// `W·x + b` for a flat input; `weight` is `[out × in]`.
pub fn linear_forward(x: &[f64], weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    let (o, i) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != i || bias.len() != o {
        return Err(Error::shape("linear", weight.shape(), &[x.len()]));
    }
    let mut y = bias.data().to_vec();
    gemm(o, i, 1, 1.0, weight.data(), x, 1.0, &mut y);
    Ok(y)
}

/// Returns `(∂L/∂x, ∂L/∂W, ∂L/∂b)`.
pub fn linear_backward(x: &[f64], weight: &Tensor, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (o, i) = (weight.shape()[0], weight.shape()[1]);
    let mut dx = vec![0.0; i];
    gemm_tn(i, o, 1, 1.0, weight.data(), grad_out, 0.0, &mut dx);
    let mut dw = vec![0.0; o * i];
    gemm(o, 1, i, 1.0, grad_out, x, 0.0, &mut dw);
    (dx, dw, grad_out.to_vec())
}

/// Mean softmax cross-entropy over a batch of logit rows, and its gradient
/// `(softmax − one_hot) / batch`.
pub fn softmax_cross_entropy(logits: &[Vec<f64>], labels: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if logits.len() != labels.len() {
        return Err(Error::shape("cross entropy", &[logits.len()], &[labels.len()]));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let y = y as usize;
        if y >= z.len() {
            return Err(Error::InvalidLabel(y as u8));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - z[y];
        grads.push(
            z.iter()
                .enumerate()
                .map(|(k, v)| ((v - log_sum).exp() - if k == y { 1.0 } else { 0.0 }) / n)
                .collect(),
        );
    }
    Ok((loss / n, grads))
}
