//! Gradient-weighted class activation maps over the last conv block.

use crate::frame::Frame;
use crate::nn::{Layer, Network, NnError, Tensor};
use crate::salient::resize_bilinear_raw;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCam<S> {
    /// `[height, width]` of the last conv feature map, all values `>= 0`.
    pub heatmap: Tensor<S>,
    /// Index of the layer whose output was used as the feature maps.
    pub feature_layer: usize,
}

/// Heatmap `ReLU(sum_k alpha_k A^k)` where `A^k` are the feature maps after
/// the last conv layer (after its ReLU when one follows directly) and
/// `alpha_k` is the spatial mean of the gradient of the target class logit
/// w.r.t. `A^k`.
pub fn gradcam<S: Scalar>(net: &Network<S>, input: &Tensor<S>, target_class: usize) -> Result<GradCam<S>, NnError> {
    if target_class >= net.num_classes() {
        return Err(NnError::InvalidClass(target_class));
    }
    let layers = net.layers();
    let conv = layers
        .iter()
        .rposition(|l| matches!(l, Layer::Conv2d(_)))
        .ok_or(NnError::NoConvLayer)?;
    let feature_layer = if matches!(layers.get(conv + 1), Some(Layer::Relu)) {
        conv + 1
    } else {
        conv
    };
    let trace = net.forward_trace(input)?;
    let logits_layer = layers.len() - 2;
    let mut seed = vec![S::zero(); net.num_classes()];
    seed[target_class] = S::one();
    let seed = Tensor::from_parts(vec![seed.len()], seed);
    let grad = if feature_layer >= logits_layer {
        seed
    } else {
        net.backprop(&trace, logits_layer, seed, feature_layer + 1, true, None)
            .expect("input gradient requested")
    };
    let maps = &trace[feature_layer + 1];
    let (k, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    let area = S::from_usize_lossy(h * w);
    let weights: Vec<S> = (0..k)
        .map(|c| grad.data()[c * h * w..(c + 1) * h * w].iter().copied().sum::<S>() / area)
        .collect();
    let mut cam = vec![S::zero(); h * w];
    for (c, &alpha) in weights.iter().enumerate() {
        let plane = &maps.data()[c * h * w..(c + 1) * h * w];
        for (dst, &a) in cam.iter_mut().zip(plane) {
            *dst += alpha * a;
        }
    }
    for v in &mut cam {
        *v = v.max(S::zero());
    }
    Ok(GradCam {
        heatmap: Tensor::from_parts(vec![h, w], cam),
        feature_layer,
    })
}

/// Scales the heatmap so its maximum maps to 255 (all zeros stay zero),
/// rounding half away from zero.
pub fn heatmap_to_gray<S: Scalar>(heatmap: &Tensor<S>) -> Vec<u8> {
    let max = heatmap.data().iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossless()));
    heatmap
        .data()
        .iter()
        .map(|v| {
            if max > 0.0 {
                (v.to_f64_lossless() / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// `0.5 * image + 0.5 * heat`, where the heatmap is bilinearly upscaled to
/// the image size and colorized into the red channel only.
pub fn render_overlay<S: Scalar>(image: &Frame, heatmap: &Tensor<S>) -> Frame {
    let (hh, hw) = (heatmap.shape()[0], heatmap.shape()[1]);
    let gray = heatmap_to_gray(heatmap);
    let up = resize_bilinear_raw(&gray, hw, hh, 1, image.width(), image.height());
    let mut px = Vec::with_capacity(image.pixels().len());
    for (rgb, &heat) in image.pixels().chunks_exact(3).zip(&up) {
        for (ch, &v) in rgb.iter().enumerate() {
            let colored = if ch == 0 { f64::from(heat) } else { 0.0 };
            px.push((0.5 * f64::from(v) + 0.5 * colored).round().clamp(0.0, 255.0) as u8);
        }
    }
    Frame::new(image.width(), image.height(), px, image.index).expect("same dimensions as the input image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use crate::rng::PinnedRng;

    #[test]
    fn needs_a_conv_layer() {
        let arch = Architecture {
            input_shape: [1, 2, 2],
            num_classes: 3,
            layers: vec![
                crate::nn::LayerSpec::Flatten,
                crate::nn::LayerSpec::Dense { out_features: 3 },
                crate::nn::LayerSpec::Softmax,
            ],
        };
        let net = Network::<f64>::zeroed(arch).unwrap();
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(gradcam(&net, &x, 0), Err(NnError::NoConvLayer)));
    }

    #[test]
    fn zero_gradients_give_zero_heatmap() {
        // zero dense head: the class logit does not depend on the features
        let mut rng = PinnedRng::new(1);
        let mut net = Network::<f64>::he_init(Architecture::micro_vd(), &mut rng).unwrap();
        if let Some(Layer::Dense(d)) = net.layers_mut().get_mut(7) {
            d.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        let x = Tensor::from_vec(vec![3, 64, 64], (0..3 * 64 * 64).map(|_| rng.next_unit()).collect()).unwrap();
        let cam = gradcam(&net, &x, 2).unwrap();
        assert_eq!(cam.heatmap.shape(), &[32, 32]);
        assert!(cam.heatmap.data().iter().all(|&v| v == 0.0));
        assert!(heatmap_to_gray(&cam.heatmap).iter().all(|&v| v == 0));
    }

    #[test]
    fn heatmap_is_non_negative_for_random_models() {
        for seed in 0..5 {
            let mut rng = PinnedRng::new(seed);
            let net = Network::<f64>::he_init(Architecture::micro_vd(), &mut rng).unwrap();
            let x = Tensor::from_vec(vec![3, 64, 64], (0..3 * 64 * 64).map(|_| rng.next_unit()).collect()).unwrap();
            for class in 0..3 {
                let cam = gradcam(&net, &x, class).unwrap();
                assert_eq!(cam.feature_layer, 4);
                assert!(cam.heatmap.data().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn overlay_blends_red_channel() {
        let img = Frame::filled(4, 4, [100, 50, 200], 0).unwrap();
        let heat = Tensor::from_vec(vec![2, 2], vec![1.0f64, 1.0, 1.0, 1.0]).unwrap();
        let out = render_overlay(&img, &heat);
        assert_eq!(out.pixel(0, 0), [178, 25, 100]);
    }
}
