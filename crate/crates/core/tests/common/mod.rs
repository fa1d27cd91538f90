//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use salient_core::dataset::{build_dataset, split_dataset, ClassLabel, Manifest, MANIFEST_FILE};
use salient_core::frame::Frame;
use salient_core::metrics::{evaluate, predictions_to_jsonl, PredictionRecord};
use salient_core::nn::{
    frame_to_tensor, save_checkpoint, train, train_from_manifest, Conv2d, Dense, Layer, LayerSpec, Sample,
};
use salient_core::predictor::ModelPredictor;
use salient_core::scorer::{cohort, rank, render_table, table3_profiles, ModelProfile, RankOptions};
use salient_core::synth::{synth_salients, write_synthetic_dataset, SynthConfig};
use salient_core::{Architecture, GridSpec, Network, PinnedRng, Split, TailPolicy, Tensor, TrainingConfig};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error. Central differences at
/// h = 1e-6 over objectives summing ~100 terms carry roundoff near 3e-9, so
/// gradients smaller than this are held to an absolute 1e-8 instead.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn random_frame(rng: &mut PinnedRng, w: usize, h: usize, index: usize) -> Frame {
    let px = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
    Frame::new(w, h, px, index).unwrap()
}

/// Per-pixel mosaic mapping written from the definition: destination pixel
/// (x, y) copies pixel (x mod w, y mod h) of frame (y div h) * cols + x div w.
pub fn compose_oracle(frames: &[Frame], rows: usize, cols: usize) -> Vec<u8> {
    let (w, h) = frames[0].dims();
    let (ow, oh) = (w * cols, h * rows);
    let mut out = Vec::with_capacity(ow * oh * 3);
    for y in 0..oh {
        for x in 0..ow {
            let k = (y / h) * cols + x / w;
            out.extend_from_slice(&frames[k].pixel(x % w, y % h));
        }
    }
    out
}

pub struct CountOracle {
    pub confusion: [[usize; 3]; 3],
    pub accuracy: f64,
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
}

fn oracle_argmax(p: &[f64; 3]) -> usize {
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter().position(|&v| v == best).unwrap()
}

/// Counts every quantity by scanning the records once per cell.
pub fn metrics_oracle(records: &[PredictionRecord]) -> CountOracle {
    let pred: Vec<usize> = records.iter().map(|r| oracle_argmax(&r.probs)).collect();
    let truth: Vec<usize> = records.iter().map(|r| r.true_label.code()).collect();
    let mut confusion = [[0; 3]; 3];
    for (t, row) in confusion.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = truth.iter().zip(&pred).filter(|(a, b)| **a == t && **b == p).count();
        }
    }
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    for k in 0..3 {
        let tp = truth.iter().zip(&pred).filter(|(a, b)| **a == k && **b == k).count();
        let fp = truth.iter().zip(&pred).filter(|(a, b)| **a != k && **b == k).count();
        let fn_ = truth.iter().zip(&pred).filter(|(a, b)| **a == k && **b != k).count();
        precision[k] = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        recall[k] = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let s = precision[k] + recall[k];
        f1[k] = if s == 0.0 { 0.0 } else { 2.0 * precision[k] * recall[k] / s };
    }
    let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    CountOracle {
        confusion,
        accuracy: correct as f64 / records.len() as f64,
        precision,
        recall,
        f1,
    }
}

pub fn random_records(rng: &mut PinnedRng, n: usize) -> Vec<PredictionRecord> {
    (0..n)
        .map(|i| {
            // coarse values make exact ties common
            let raw: Vec<f64> = (0..3).map(|_| rng.below(4) as f64).collect();
            let sum: f64 = raw.iter().sum();
            let probs = if sum == 0.0 {
                [1.0 / 3.0; 3]
            } else {
                [raw[0] / sum, raw[1] / sum, raw[2] / sum]
            };
            PredictionRecord {
                sample_id: format!("r{i}"),
                true_label: ClassLabel::from_code(rng.below(3)).unwrap(),
                probs,
                latency_ms: None,
            }
        })
        .collect()
}

pub fn random_tensor(rng: &mut PinnedRng, shape: &[usize], avoid_zero: bool) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.next_normal();
            if !avoid_zero || v.abs() > 1e-2 {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

fn random_vec(rng: &mut PinnedRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.next_normal() * 0.5).collect()
}

/// Largest relative error between `Layer::backward` and central differences
/// of `sum(g * layer(x))`, over every input element and parameter.
pub fn check_layer(layer: &Layer<f64>, input: &Tensor<f64>, rng: &mut PinnedRng) -> f64 {
    let output = layer.forward(input);
    let g = random_tensor(rng, output.shape(), false);
    let objective = |l: &Layer<f64>, x: &Tensor<f64>| -> f64 {
        l.forward(x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    };
    let (mut gw, mut gb) = match layer.params() {
        Some((w, b)) => (vec![0.0; w.len()], vec![0.0; b.len()]),
        None => (vec![], vec![]),
    };
    let bufs = layer.params().map(|_| (&mut gw[..], &mut gb[..]));
    let gx = layer.backward(input, &output, &g, true, bufs).expect("input gradient");
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = input.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (objective(layer, &plus) - objective(layer, &minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], numeric));
    }
    if layer.params().is_some() {
        for (which, analytic) in [(0, &gw), (1, &gb)] {
            for i in 0..analytic.len() {
                let nudged = |delta: f64| {
                    let mut l = layer.clone();
                    let (w, b) = l.params_mut().unwrap();
                    let v = if which == 0 { w } else { b };
                    v[i] += delta;
                    objective(&l, input)
                };
                let numeric = (nudged(FD_STEP) - nudged(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic[i], numeric));
            }
        }
    }
    worst
}

/// One instance of every layer kind with random parameters, plus the input
/// shape it expects.
pub fn layer_zoo(rng: &mut PinnedRng) -> Vec<(&'static str, Layer<f64>, Vec<usize>)> {
    let conv = |rng: &mut PinnedRng, cin, cout, k, stride, padding| {
        Layer::Conv2d(Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride,
            padding,
            weight: random_vec(rng, cout * cin * k * k),
            bias: random_vec(rng, cout),
        })
    };
    vec![
        ("conv2d 3x3 pad 1", conv(rng, 3, 4, 3, 1, 1), vec![3, 6, 6]),
        ("conv2d 3x3 stride 2", conv(rng, 2, 3, 3, 2, 0), vec![2, 7, 7]),
        ("relu", Layer::Relu, vec![2, 4, 4]),
        ("maxpool 2x2", Layer::MaxPool2d { kernel: 2, stride: 2 }, vec![3, 6, 6]),
        ("flatten", Layer::Flatten, vec![2, 3, 3]),
        (
            "dense",
            Layer::Dense(Dense {
                in_features: 12,
                out_features: 3,
                weight: random_vec(rng, 36),
                bias: random_vec(rng, 3),
            }),
            vec![12],
        ),
        ("softmax", Layer::Softmax, vec![3]),
    ]
}

pub fn small_arch() -> Architecture {
    Architecture {
        input_shape: [3, 8, 8],
        num_classes: 3,
        layers: vec![
            LayerSpec::Conv2d {
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Conv2d {
                out_channels: 4,
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

fn loss_of(net: &Network<f64>, batch: &[(&Tensor<f64>, usize)]) -> f64 {
    net.batch_loss(batch).unwrap()
}

/// Checks `batch_gradients` against central differences of the mean batch
/// loss. At most `per_tensor` entries of each parameter tensor are probed,
/// spread evenly; `usize::MAX` probes all of them.
pub fn check_network(net: &Network<f64>, batch: &[(&Tensor<f64>, usize)], per_tensor: usize) -> f64 {
    let (_, grads) = net.batch_gradients(batch).unwrap();
    let mut worst = 0.0f64;
    for (t, analytic) in grads.tensors.iter().enumerate() {
        let n = analytic.len();
        let probes = per_tensor.min(n);
        for p in 0..probes {
            let i = p * n / probes;
            let nudged = |delta: f64| {
                let mut m = net.clone();
                m.param_slices_mut()[t][i] += delta;
                loss_of(&m, batch)
            };
            let numeric = (nudged(FD_STEP) - nudged(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// Network whose `target` score reads channel `quadrant` of the feature map
/// only inside that quadrant. Channel q at (y, x) sums the input over the
/// rectangle from (y, x) to the image corner opposite quadrant q, so for
/// positive inputs it peaks at quadrant q's outer corner.
pub fn quadrant_network(size: usize, quadrant: usize, target: usize) -> Network<f64> {
    assert!(size.is_multiple_of(2) && quadrant < 4 && target < 3);
    let k = 2 * size - 1;
    let arch = Architecture {
        input_shape: [1, size, size],
        num_classes: 3,
        layers: vec![
            LayerSpec::Conv2d {
                out_channels: 4,
                kernel: k,
                stride: 1,
                padding: size - 1,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 3 },
            LayerSpec::Softmax,
        ],
    };
    let mut net = Network::<f64>::zeroed(arch).unwrap();
    let in_quadrant = |q: usize, y: usize, x: usize| (y < size / 2) == (q < 2) && (x < size / 2) == q.is_multiple_of(2);
    if let Layer::Conv2d(c) = &mut net.layers_mut()[0] {
        let centre = (size - 1) as isize;
        for q in 0..4 {
            for ky in 0..k {
                for kx in 0..k {
                    let (dy, dx) = (ky as isize - centre, kx as isize - centre);
                    let away_y = if q < 2 { dy >= 0 } else { dy <= 0 };
                    let away_x = if q % 2 == 0 { dx >= 0 } else { dx <= 0 };
                    if away_y && away_x {
                        c.weight[(q * k + ky) * k + kx] = 1.0;
                    }
                }
            }
        }
    }
    // flatten order is [channel][y][x]
    if let Layer::Dense(d) = &mut net.layers_mut()[3] {
        for y in 0..size {
            for x in 0..size {
                if in_quadrant(quadrant, y, x) {
                    d.weight[target * d.in_features + (quadrant * size + y) * size + x] = 1.0;
                }
            }
        }
    }
    net
}

pub fn quadrant_of(size: usize, y: usize, x: usize) -> usize {
    2 * usize::from(y >= size / 2) + usize::from(x >= size / 2)
}

/// The synthetic learnability task: 100 train and 30 test salient images per
/// class.
pub fn synthetic_task(seed: u64, arch: &Architecture) -> (Vec<Sample<f64>>, Vec<Sample<f64>>) {
    let cfg = SynthConfig::default();
    let mut rng = PinnedRng::new(seed);
    let to_samples = |v: Vec<(ClassLabel, salient_core::SalientImage)>| -> Vec<Sample<f64>> {
        v.into_iter()
            .map(|(label, s)| Sample {
                id: s.source_id.clone(),
                label,
                input: frame_to_tensor(&s.image, arch.input_shape).unwrap(),
            })
            .collect()
    };
    let train_set = to_samples(synth_salients(100, &cfg, &mut rng).unwrap());
    let test_set = to_samples(synth_salients(30, &cfg, &mut rng).unwrap());
    (train_set, test_set)
}

pub fn train_synthetic(seed: u64, epochs: usize) -> salient_core::nn::TrainOutcome<f64> {
    let arch = Architecture::micro_vd();
    let (tr, te) = synthetic_task(seed, &arch);
    let config = TrainingConfig {
        epochs,
        seed,
        ..Default::default()
    };
    train(&tr, &te, &arch, &config).unwrap()
}

/// dataset -> split -> train -> eval -> score into `out`, every artifact
/// written to disk. Latency is a wall-clock measurement and so is not part
/// of this chain; the model's profile carries a fixed nominal time.
pub fn run_pipeline(out: &Path, seed: u64) {
    let grid = GridSpec::THREE_BY_TWO;
    let videos = out.join("videos");
    write_synthetic_dataset(&videos, 4, 2, &SynthConfig::default(), seed).unwrap();
    let data = out.join("dataset");
    let built = build_dataset(&videos, grid, TailPolicy::Drop, &data).unwrap();
    let (manifest, _) = split_dataset(&built.manifest, 0.25, seed).unwrap();
    manifest.write(&data.join(MANIFEST_FILE)).unwrap();
    let manifest = Manifest::read(&data.join(MANIFEST_FILE)).unwrap();

    let arch = Architecture::micro_vd();
    let config = TrainingConfig {
        epochs: 2,
        seed,
        ..Default::default()
    };
    let outcome = train_from_manifest::<f64>(&manifest, &data, &arch, &config).unwrap();
    std::fs::write(out.join("model.ckpt"), save_checkpoint(&outcome.network, Some(seed))).unwrap();
    let log: String = outcome
        .log
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    std::fs::write(out.join("train_log.jsonl"), log).unwrap();

    let mut predictor = ModelPredictor::new("MicroVD", grid.frames_per_salient(), outcome.network).unwrap();
    let eval = evaluate(manifest.split(Split::Test), &data, &mut predictor).unwrap();
    std::fs::write(out.join("predictions.jsonl"), predictions_to_jsonl(&eval.predictions)).unwrap();
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&eval.report).unwrap()).unwrap();

    let mut profiles = cohort(&table3_profiles(), 6);
    let params = predictor.network.param_count() as f64 / 1e6;
    profiles.push(ModelProfile {
        name: "MicroVD".into(),
        input_frames: 6,
        params_millions: params,
        num_layers: 9,
        time_ms: 100.0,
        val_loss: eval.report.metrics.mean_loss,
        accuracy_pct: eval.report.metrics.accuracy * 100.0,
    });
    let ranked = rank(&profiles, RankOptions::default()).unwrap();
    std::fs::write(out.join("ranking.json"), serde_json::to_string_pretty(&ranked).unwrap()).unwrap();
    std::fs::write(out.join("ranking.txt"), render_table(&ranked)).unwrap();
}

/// Every regular file below `root`, as (relative path, bytes), sorted.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
