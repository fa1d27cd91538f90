//! Layer kernels. Activations are unbatched `[channels, height, width]` or
//! `[features]` tensors; batching happens one level up.

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Serializable layer descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][kh][kw]`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Conv2d(Conv2d<S>),
    Relu,
    MaxPool2d { kernel: usize, stride: usize },
    Flatten,
    Dense(Dense<S>),
    Softmax,
}

/// Output extent of a window sweep, or `None` if the window never fits.
pub(crate) fn window_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` for which `o * stride + offset - padding`
/// lands inside `[0, len)`.
fn valid_range(out_len: usize, len: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    // need o*stride + offset >= padding and o*stride + offset < len + padding
    let lo = if offset >= padding {
        0
    } else {
        (padding - offset).div_ceil(stride)
    };
    let hi = if len + padding > offset {
        ((len + padding - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

impl<S: Scalar> Conv2d<S> {
    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            window_out(h, self.kernel, self.stride, self.padding).expect("validated architecture"),
            window_out(w, self.kernel, self.stride, self.padding).expect("validated architecture"),
        )
    }

    fn forward(&self, input: &Tensor<S>) -> Tensor<S> {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oh, ow) = self.out_dims(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let x = input.data();
        let mut out = vec![S::zero(); self.out_channels * oh * ow];
        for o in 0..self.out_channels {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..c_in {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for u in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, h, s, u, p);
                    for v in 0..k {
                        let wt = self.weight[((o * c_in + c) * k + u) * k + v];
                        let (ox_lo, ox_hi) = valid_range(ow, w, s, v, p);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + u - p;
                            let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                            let row_in = &xin[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let shift = v as isize - p as isize;
                                let src = &row_in[(ox_lo as isize + shift) as usize..(ox_hi as isize + shift) as usize];
                                for (dst, &xv) in row_out[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *dst += wt * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    row_out[ox] += wt * row_in[ox * s + v - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_parts(vec![self.out_channels, oh, ow], out)
    }

    fn backward(
        &self,
        input: &Tensor<S>,
        grad_out: &Tensor<S>,
        need_input_grad: bool,
        grad_w: &mut [S],
        grad_b: &mut [S],
    ) -> Option<Tensor<S>> {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (oh, ow) = self.out_dims(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let x = input.data();
        let g = grad_out.data();
        let mut gx = if need_input_grad {
            vec![S::zero(); x.len()]
        } else {
            Vec::new()
        };
        for o in 0..self.out_channels {
            let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
            grad_b[o] += gplane.iter().copied().sum::<S>();
            for c in 0..c_in {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for u in 0..k {
                    let (oy_lo, oy_hi) = valid_range(oh, h, s, u, p);
                    for v in 0..k {
                        let widx = ((o * c_in + c) * k + u) * k + v;
                        let wt = self.weight[widx];
                        let (ox_lo, ox_hi) = valid_range(ow, w, s, v, p);
                        let mut acc = S::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + u - p;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for (ox, &go) in (ox_lo..ox_hi).zip(&grow[ox_lo..ox_hi]) {
                                let ix = ox * s + v - p;
                                acc += go * xin[iy * w + ix];
                                if need_input_grad {
                                    gx[c * h * w + iy * w + ix] += wt * go;
                                }
                            }
                        }
                        grad_w[widx] += acc;
                    }
                }
            }
        }
        need_input_grad.then(|| Tensor::from_parts(input.shape().to_vec(), gx))
    }
}

impl<S: Scalar> Dense<S> {
    fn forward(&self, input: &Tensor<S>) -> Tensor<S> {
        let x = input.data();
        let out = (0..self.out_features)
            .map(|o| {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                self.bias[o] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<S>()
            })
            .collect();
        Tensor::from_parts(vec![self.out_features], out)
    }

    fn backward(
        &self,
        input: &Tensor<S>,
        grad_out: &Tensor<S>,
        need_input_grad: bool,
        grad_w: &mut [S],
        grad_b: &mut [S],
    ) -> Option<Tensor<S>> {
        let x = input.data();
        let g = grad_out.data();
        for o in 0..self.out_features {
            grad_b[o] += g[o];
            let row = &mut grad_w[o * self.in_features..(o + 1) * self.in_features];
            for (gw, &xv) in row.iter_mut().zip(x) {
                *gw += g[o] * xv;
            }
        }
        need_input_grad.then(|| {
            let mut gx = vec![S::zero(); self.in_features];
            for (row, &go) in self.weight.chunks_exact(self.in_features).zip(g) {
                for (gi, &wv) in gx.iter_mut().zip(row) {
                    *gi += wv * go;
                }
            }
            Tensor::from_parts(input.shape().to_vec(), gx)
        })
    }
}

fn maxpool_forward<S: Scalar>(input: &Tensor<S>, kernel: usize, stride: usize) -> Tensor<S> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = window_out(h, kernel, stride, 0).expect("validated architecture");
    let ow = window_out(w, kernel, stride, 0).expect("validated architecture");
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (_, best) = maxpool_argmax(x, ch, h, w, oy * stride, ox * stride, kernel);
                out.push(best);
            }
        }
    }
    Tensor::from_parts(vec![c, oh, ow], out)
}

/// First maximum in row-major window order.
fn maxpool_argmax<S: Scalar>(x: &[S], ch: usize, h: usize, w: usize, y0: usize, x0: usize, k: usize) -> (usize, S) {
    let base = ch * h * w;
    let mut best_idx = base + y0 * w + x0;
    let mut best = x[best_idx];
    for dy in 0..k {
        for dx in 0..k {
            let idx = base + (y0 + dy) * w + x0 + dx;
            if x[idx] > best {
                best = x[idx];
                best_idx = idx;
            }
        }
    }
    (best_idx, best)
}

fn maxpool_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>, kernel: usize, stride: usize) -> Tensor<S> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![S::zero(); x.len()];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (idx, _) = maxpool_argmax(x, ch, h, w, oy * stride, ox * stride, kernel);
                gx[idx] += g[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), gx)
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<S: Scalar> Layer<S> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d { kernel, stride } => LayerSpec::MaxPool2d {
                kernel: *kernel,
                stride: *stride,
            },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense {
                out_features: d.out_features,
            },
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    /// `(weight, bias)` for parametric layers.
    pub fn params(&self) -> Option<(&[S], &[S])> {
        match self {
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<S>, &mut Vec<S>)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }

    /// Fan-in used for He initialisation.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(c) => Some(c.in_channels * c.kernel * c.kernel),
            Layer::Dense(d) => Some(d.in_features),
            _ => None,
        }
    }

    pub fn forward(&self, input: &Tensor<S>) -> Tensor<S> {
        match self {
            Layer::Conv2d(c) => c.forward(input),
            Layer::Relu => input.map(|v| if v > S::zero() { v } else { S::zero() }),
            Layer::MaxPool2d { kernel, stride } => maxpool_forward(input, *kernel, *stride),
            Layer::Flatten => input.clone().reshaped(&[input.len()]),
            Layer::Dense(d) => d.forward(input),
            Layer::Softmax => Tensor::from_parts(input.shape().to_vec(), softmax(input.data())),
        }
    }

    /// Back-propagates `grad_out` (gradient w.r.t. this layer's output).
    /// Parameter gradients are added into `param_grads`; the input gradient
    /// is returned when requested.
    pub fn backward(
        &self,
        input: &Tensor<S>,
        output: &Tensor<S>,
        grad_out: &Tensor<S>,
        need_input_grad: bool,
        param_grads: Option<(&mut [S], &mut [S])>,
    ) -> Option<Tensor<S>> {
        match self {
            Layer::Conv2d(c) => {
                let (gw, gb) = param_grads.expect("conv layer needs gradient buffers");
                c.backward(input, grad_out, need_input_grad, gw, gb)
            }
            Layer::Dense(d) => {
                let (gw, gb) = param_grads.expect("dense layer needs gradient buffers");
                d.backward(input, grad_out, need_input_grad, gw, gb)
            }
            _ if !need_input_grad => None,
            Layer::Relu => Some(Tensor::from_parts(
                input.shape().to_vec(),
                input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
                    .collect(),
            )),
            Layer::MaxPool2d { kernel, stride } => Some(maxpool_backward(input, grad_out, *kernel, *stride)),
            Layer::Flatten => Some(grad_out.clone().reshaped(input.shape())),
            Layer::Softmax => {
                let p = output.data();
                let dot: S = p.iter().zip(grad_out.data()).map(|(&a, &b)| a * b).sum();
                Some(Tensor::from_parts(
                    input.shape().to_vec(),
                    p.iter().zip(grad_out.data()).map(|(&pi, &gi)| pi * (gi - dot)).collect(),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1..7 {
            for k in 1..5 {
                for s in 1..4 {
                    for p in 0..3 {
                        let Some(out) = window_out(len, k, s, p) else { continue };
                        for off in 0..k {
                            let brute: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let pos = (o * s + off) as isize - p as isize;
                                    pos >= 0 && (pos as usize) < len
                                })
                                .collect();
                            let (lo, hi) = valid_range(out, len, s, off, p);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), brute, "len {len} k {k} s {s} p {p} off {off}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0f64, 2.0, 3.0]);
        let b = softmax(&[101.0f64, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let big = softmax(&[1000.0f64, -1000.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn maxpool_picks_first_max() {
        let t = Tensor::from_vec(vec![1, 2, 2], vec![5.0f64, 5.0, 1.0, 2.0]).unwrap();
        let out = maxpool_forward(&t, 2, 2);
        assert_eq!(out.data(), &[5.0]);
        let g = Tensor::from_vec(vec![1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(maxpool_backward(&t, &g, 2, 2).data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
