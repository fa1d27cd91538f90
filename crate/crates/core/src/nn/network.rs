use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::layer::{window_out, Conv2d, Dense, Layer, LayerSpec};
use crate::nn::loss::{cross_entropy_one_hot, softmax_cross_entropy_grad};
use crate::nn::{NnError, Tensor};
use crate::rng::PinnedRng;
use crate::scalar::Scalar;

/// Layer stack plus input geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Conv(8,3,1,1) ReLU MaxPool(2,2) Conv(16,3,1,1) ReLU MaxPool(2,2)
    /// Flatten Dense(3) Softmax on 3x64x64 inputs.
    pub fn micro_vd() -> Self {
        Self {
            input_shape: [3, 64, 64],
            num_classes: 3,
            layers: vec![
                LayerSpec::Conv2d {
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                LayerSpec::Conv2d {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 3 },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Shapes of every activation, input first. Fails if the chain is
    /// inconsistent or the head is not `Dense(num_classes), Softmax`.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let bad = |msg: String| NnError::InvalidArchitecture(msg);
        if self.input_shape.contains(&0) {
            return Err(bad(format!("input shape {:?} has a zero dimension", self.input_shape)));
        }
        if self.num_classes == 0 {
            return Err(bad("num_classes must be positive".into()));
        }
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, spec) in self.layers.iter().enumerate() {
            let cur = shapes.last().expect("non-empty").clone();
            let spatial = |what: &str| -> Result<(usize, usize, usize), NnError> {
                match cur.as_slice() {
                    [c, h, w] => Ok((*c, *h, *w)),
                    _ => Err(bad(format!("layer {i} ({what}) needs a 3-d input, got {cur:?}"))),
                }
            };
            let next = match *spec {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (_, h, w) = spatial("conv2d")?;
                    if out_channels == 0 {
                        return Err(bad(format!("layer {i}: conv2d needs out_channels > 0")));
                    }
                    match (window_out(h, kernel, stride, padding), window_out(w, kernel, stride, padding)) {
                        (Some(oh), Some(ow)) => vec![out_channels, oh, ow],
                        _ => return Err(bad(format!("layer {i}: conv2d window does not fit {cur:?}"))),
                    }
                }
                LayerSpec::MaxPool2d { kernel, stride } => {
                    let (c, h, w) = spatial("maxpool2d")?;
                    match (window_out(h, kernel, stride, 0), window_out(w, kernel, stride, 0)) {
                        (Some(oh), Some(ow)) => vec![c, oh, ow],
                        _ => return Err(bad(format!("layer {i}: maxpool window does not fit {cur:?}"))),
                    }
                }
                LayerSpec::Relu => cur,
                LayerSpec::Flatten => vec![cur.iter().product()],
                LayerSpec::Dense { out_features } => {
                    if cur.len() != 1 {
                        return Err(bad(format!("layer {i}: dense needs a flat input, got {cur:?}")));
                    }
                    if out_features == 0 {
                        return Err(bad(format!("layer {i}: dense needs out_features > 0")));
                    }
                    vec![out_features]
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(bad(format!("layer {i}: softmax must be the last layer")));
                    }
                    cur
                }
            };
            shapes.push(next);
        }
        let n = self.layers.len();
        let head_ok = n >= 2
            && self.layers[n - 1] == LayerSpec::Softmax
            && self.layers[n - 2]
                == LayerSpec::Dense {
                    out_features: self.num_classes,
                };
        if !head_ok {
            return Err(bad(format!(
                "architecture must end with Dense({}) then Softmax",
                self.num_classes
            )));
        }
        Ok(shapes)
    }
}

/// Parameter-shaped buffers: for each parametric layer in order, its weight
/// then its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(net: &Network<S>) -> Self {
        Self {
            tensors: net.param_slices().iter().map(|p| vec![S::zero(); p.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients<S>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    fn scale(&mut self, factor: S) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> S {
        self.tensors.iter().flatten().fold(S::zero(), |m, v| m.max(v.abs()))
    }
}

/// A feed-forward classifier built from an [`Architecture`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    arch: Architecture,
    layers: Vec<Layer<S>>,
    /// For each layer, index of its weight buffer in [`Gradients::tensors`].
    param_slot: Vec<Option<usize>>,
}

impl<S: Scalar> Network<S> {
    /// All weights and biases zero.
    pub fn zeroed(arch: Architecture) -> Result<Self, NnError> {
        let shapes = arch.activation_shapes()?;
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut param_slot = Vec::with_capacity(arch.layers.len());
        let mut slot = 0;
        for (i, spec) in arch.layers.iter().enumerate() {
            let input = &shapes[i];
            let layer = match *spec {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Layer::Conv2d(Conv2d {
                    in_channels: input[0],
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight: vec![S::zero(); out_channels * input[0] * kernel * kernel],
                    bias: vec![S::zero(); out_channels],
                }),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { kernel, stride } => Layer::MaxPool2d { kernel, stride },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { out_features } => Layer::Dense(Dense {
                    in_features: input[0],
                    out_features,
                    weight: vec![S::zero(); out_features * input[0]],
                    bias: vec![S::zero(); out_features],
                }),
                LayerSpec::Softmax => Layer::Softmax,
            };
            if layer.params().is_some() {
                param_slot.push(Some(slot));
                slot += 2;
            } else {
                param_slot.push(None);
            }
            layers.push(layer);
        }
        Ok(Self {
            arch,
            layers,
            param_slot,
        })
    }

    /// He-normal weights (variance `2 / fan_in`) drawn layer by layer in
    /// row-major order; biases zero.
    pub fn he_init(arch: Architecture, rng: &mut PinnedRng) -> Result<Self, NnError> {
        let mut net = Self::zeroed(arch)?;
        for layer in &mut net.layers {
            if let Some(fan_in) = layer.fan_in() {
                let std = (2.0 / fan_in as f64).sqrt();
                let (w, _) = layer.params_mut().expect("parametric layer");
                for v in w.iter_mut() {
                    *v = S::from_f64_lossy(rng.next_normal() * std);
                }
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn param_slices(&self) -> Vec<&[S]> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut Vec<S>> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<(), NnError> {
        if input.shape() != self.arch.input_shape {
            return Err(NnError::ShapeMismatch {
                expected: self.arch.input_shape.to_vec(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Every activation, input first and class probabilities last.
    pub fn forward_trace(&self, input: &Tensor<S>) -> Result<Vec<Tensor<S>>, NnError> {
        self.check_input(input)?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("non-empty"));
            trace.push(next);
        }
        Ok(trace)
    }

    /// Class probabilities.
    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        self.check_input(input)?;
        let mut act = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            act = layer.forward(&act);
        }
        Ok(act)
    }

    /// Propagates `grad` (w.r.t. the output of layer `top`) down through
    /// layers `top..=bottom`, adding parameter gradients into `grads` when
    /// given. Returns the gradient w.r.t. the input of layer `bottom` when
    /// `need_bottom_input` is set.
    pub(crate) fn backprop(
        &self,
        trace: &[Tensor<S>],
        top: usize,
        mut grad: Tensor<S>,
        bottom: usize,
        need_bottom_input: bool,
        mut grads: Option<&mut Gradients<S>>,
    ) -> Option<Tensor<S>> {
        for i in (bottom..=top).rev() {
            let layer = &self.layers[i];
            let need_input = i > bottom || need_bottom_input;
            let (input, output) = (&trace[i], &trace[i + 1]);
            let next = match (self.param_slot[i], grads.as_deref_mut()) {
                (Some(slot), Some(g)) => {
                    let (w, rest) = g.tensors.split_at_mut(slot + 1);
                    layer.backward(input, output, &grad, need_input, Some((&mut w[slot], &mut rest[0])))
                }
                (Some(_), None) => {
                    let (w, b) = layer.params().expect("parametric layer");
                    let (mut gw, mut gb) = (vec![S::zero(); w.len()], vec![S::zero(); b.len()]);
                    layer.backward(input, output, &grad, need_input, Some((&mut gw, &mut gb)))
                }
                (None, _) => layer.backward(input, output, &grad, need_input, None),
            };
            {
                let g = next?;
                grad = g
            }
        }
        Some(grad)
    }

    /// Loss and parameter gradients for one sample, via the fused
    /// softmax/cross-entropy gradient `p - y` at the logits.
    pub fn sample_gradients(&self, input: &Tensor<S>, label: usize) -> Result<(S, Gradients<S>), NnError> {
        if label >= self.arch.num_classes {
            return Err(NnError::InvalidClass(label));
        }
        let trace = self.forward_trace(input)?;
        let probs = trace.last().expect("non-empty");
        let loss = cross_entropy_one_hot(label, probs.data());
        let dlogits = softmax_cross_entropy_grad(label, probs.data());
        let mut grads = Gradients::zeros_like(self);
        let n = self.layers.len();
        self.backprop(
            &trace,
            n - 2,
            Tensor::from_parts(vec![dlogits.len()], dlogits),
            0,
            false,
            Some(&mut grads),
        );
        Ok((loss, grads))
    }

    /// Mean cross-entropy and its exact gradient over a batch. Samples are
    /// processed in parallel and reduced in sample order, so the result is
    /// bit-identical to a sequential loop.
    pub fn batch_gradients(&self, batch: &[(&Tensor<S>, usize)]) -> Result<(S, Gradients<S>), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let per_sample: Vec<(S, Gradients<S>)> = batch
            .par_iter()
            .map(|(x, y)| self.sample_gradients(x, *y))
            .collect::<Result<_, _>>()?;
        let mut iter = per_sample.into_iter();
        let (mut loss, mut total) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            total.add_assign(&g);
        }
        let inv = S::one() / S::from_usize_lossy(batch.len());
        total.scale(inv);
        Ok((loss * inv, total))
    }

    /// Mean cross-entropy over a batch without gradients.
    pub fn batch_loss(&self, batch: &[(&Tensor<S>, usize)]) -> Result<S, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let losses: Vec<S> = batch
            .par_iter()
            .map(|(x, y)| {
                if *y >= self.arch.num_classes {
                    return Err(NnError::InvalidClass(*y));
                }
                Ok(cross_entropy_one_hot(*y, self.forward(x)?.data()))
            })
            .collect::<Result<_, _>>()?;
        let total: S = losses.into_iter().fold(S::zero(), |a, b| a + b);
        Ok(total / S::from_usize_lossy(batch.len()))
    }

    /// Same architecture, parameters converted to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let mut out = Network::<T>::zeroed(self.arch.clone()).expect("architecture already validated");
        for (dst, src) in out.param_slices_mut().into_iter().zip(self.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(s.to_f64_lossless());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            input_shape: [1, 1, 1],
            num_classes: 3,
            layers: vec![
                LayerSpec::Conv2d {
                    out_channels: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 3 },
                LayerSpec::Softmax,
            ],
        }
    }

    #[test]
    fn micro_vd_shapes() {
        let shapes = Architecture::micro_vd().activation_shapes().unwrap();
        assert_eq!(shapes[1], vec![8, 64, 64]);
        assert_eq!(shapes[3], vec![8, 32, 32]);
        assert_eq!(shapes[6], vec![16, 16, 16]);
        assert_eq!(shapes[7], vec![4096]);
        assert_eq!(shapes[9], vec![3]);
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut a = Architecture::micro_vd();
        a.layers.pop();
        assert!(a.activation_shapes().is_err());
        let mut a = Architecture::micro_vd();
        a.layers.remove(6);
        assert!(a.activation_shapes().is_err());
        let mut a = Architecture::micro_vd();
        a.layers[0] = LayerSpec::Conv2d {
            out_channels: 8,
            kernel: 99,
            stride: 1,
            padding: 0,
        };
        assert!(a.activation_shapes().is_err());
        let mut a = Architecture::micro_vd();
        a.layers.insert(0, LayerSpec::Softmax);
        assert!(a.activation_shapes().is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let net = Network::<f64>::zeroed(Architecture::micro_vd()).unwrap();
        let x = Tensor::from_vec(vec![3, 64, 64], vec![0.5; 3 * 64 * 64]).unwrap();
        let p = net.forward(&x).unwrap();
        for v in p.data() {
            assert_eq!(*v, 1.0 / 3.0);
        }
    }

    #[test]
    fn shape_mismatch() {
        let net = Network::<f64>::zeroed(Architecture::micro_vd()).unwrap();
        let x = Tensor::from_vec(vec![3, 32, 32], vec![0.0; 3 * 32 * 32]).unwrap();
        assert!(matches!(net.forward(&x), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn hand_computed_logits() {
        // conv 1x1 weight 2, bias 1 on input 3 -> 7; dense weights [1,-1,0.5], bias [0,1,2]
        // logits = [7, -6, 5.5]
        let mut net = Network::<f64>::zeroed(tiny_arch()).unwrap();
        {
            let p = net.param_slices_mut();
            let mut it = p.into_iter();
            *it.next().unwrap() = vec![2.0];
            *it.next().unwrap() = vec![1.0];
            *it.next().unwrap() = vec![1.0, -1.0, 0.5];
            *it.next().unwrap() = vec![0.0, 1.0, 2.0];
        }
        let x = Tensor::from_vec(vec![1, 1, 1], vec![3.0]).unwrap();
        let trace = net.forward_trace(&x).unwrap();
        assert_eq!(trace[3].data(), &[7.0, -6.0, 5.5]);
        let z = [7.0f64, -6.0, 5.5];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for (p, zi) in trace[4].data().iter().zip(z) {
            assert!((p - zi.exp() / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_batch_matches_single_sample() {
        let mut rng = PinnedRng::new(4);
        let arch = Architecture {
            input_shape: [2, 5, 5],
            num_classes: 3,
            layers: vec![
                LayerSpec::Conv2d {
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 3 },
                LayerSpec::Softmax,
            ],
        };
        let net = Network::<f64>::he_init(arch, &mut rng).unwrap();
        let x = Tensor::from_vec(vec![2, 5, 5], (0..50).map(|_| rng.next_unit()).collect()).unwrap();
        let (l1, g1) = net.sample_gradients(&x, 1).unwrap();
        let (l4, g4) = net.batch_gradients(&[(&x, 1), (&x, 1), (&x, 1), (&x, 1)]).unwrap();
        assert!((l1 - l4).abs() < 1e-14);
        for (a, b) in g1.tensors.iter().flatten().zip(g4.tensors.iter().flatten()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_input_gives_zero_conv_weight_grads() {
        let mut rng = PinnedRng::new(8);
        let net = Network::<f64>::he_init(Architecture::micro_vd(), &mut rng).unwrap();
        let x = Tensor::zeros(&[3, 64, 64]);
        let (_, g) = net.sample_gradients(&x, 0).unwrap();
        assert!(g.tensors[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f32_and_f64_agree() {
        let mut rng = PinnedRng::new(12);
        let net = Network::<f64>::he_init(Architecture::micro_vd(), &mut rng).unwrap();
        let x = Tensor::from_vec(vec![3, 64, 64], (0..3 * 64 * 64).map(|_| rng.next_unit()).collect()).unwrap();
        let p64 = net.forward(&x).unwrap();
        let p32 = net.cast::<f32>().forward(&x.cast::<f32>()).unwrap();
        for (a, b) in p64.data().iter().zip(p32.data()) {
            assert!((a - f64::from(*b)).abs() < 1e-4);
        }
    }
}
