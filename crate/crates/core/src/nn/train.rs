use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Manifest, ManifestRecord, Split};
use crate::frame::{read_ppm_file, Frame};
use crate::nn::{Architecture, Network, NnError, Sgd, Tensor, TrainingConfig};
use crate::rng::PinnedRng;
use crate::salient::resize_bilinear;
use crate::scalar::Scalar;

/// One classifier input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub id: String,
    pub label: ClassLabel,
    pub input: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub network: Network<S>,
    pub log: Vec<EpochLog>,
}

/// Resizes to the input geometry and converts to `[channels, h, w]` with
/// values scaled to `[0, 1]`.
pub fn frame_to_tensor<S: Scalar>(frame: &Frame, input_shape: [usize; 3]) -> Result<Tensor<S>, NnError> {
    let [c, h, w] = input_shape;
    if c != 3 {
        return Err(NnError::ShapeMismatch {
            expected: vec![3, h, w],
            got: input_shape.to_vec(),
        });
    }
    let resized = resize_bilinear(frame, w, h);
    let px = resized.pixels();
    let scale = S::from_f64_lossy(1.0 / 255.0);
    let mut data = vec![S::zero(); 3 * h * w];
    for ch in 0..3 {
        for i in 0..h * w {
            data[ch * h * w + i] = S::from_f64_lossy(f64::from(px[i * 3 + ch])) * scale;
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

/// Loads manifest records (paths relative to `base_dir`) as network inputs,
/// preserving record order.
pub fn load_samples<'a, S: Scalar>(
    records: impl IntoIterator<Item = &'a ManifestRecord>,
    base_dir: &Path,
    input_shape: [usize; 3],
) -> Result<Vec<Sample<S>>, NnError> {
    let records: Vec<&ManifestRecord> = records.into_iter().collect();
    records
        .par_iter()
        .map(|r| {
            let path = base_dir.join(&r.salient_path);
            let frame = read_ppm_file(&path).map_err(|source| NnError::Frames {
                path: path.clone(),
                source,
            })?;
            Ok(Sample {
                id: r.salient_path.clone(),
                label: r.label,
                input: frame_to_tensor(&frame, input_shape)?,
            })
        })
        .collect()
}

fn pairs<S>(samples: &[Sample<S>]) -> Vec<(&Tensor<S>, usize)> {
    samples.iter().map(|s| (&s.input, s.label.code())).collect()
}

fn accuracy<S: Scalar>(net: &Network<S>, samples: &[Sample<S>]) -> Result<f64, NnError> {
    let correct: Vec<bool> = samples
        .par_iter()
        .map(|s| Ok(net.forward(&s.input)?.argmax() == s.label.code()))
        .collect::<Result<_, NnError>>()?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / samples.len() as f64)
}

/// Mini-batch SGD on mean cross-entropy. Initialisation and the per-epoch
/// shuffles draw from one stream seeded by `config.seed`. After each epoch
/// the loss is re-evaluated over the whole training set; validation loss and
/// accuracy are reported when `val` is non-empty.
pub fn train<S: Scalar>(
    train: &[Sample<S>],
    val: &[Sample<S>],
    arch: &Architecture,
    config: &TrainingConfig,
) -> Result<TrainOutcome<S>, NnError> {
    config.validate()?;
    arch.activation_shapes()?;
    for label in ClassLabel::ALL.into_iter().take(arch.num_classes) {
        if !train.iter().any(|s| s.label == label) {
            return Err(NnError::EmptyClass(label));
        }
    }
    let mut rng = PinnedRng::new(config.seed);
    let mut network = Network::he_init(arch.clone(), &mut rng)?;
    let mut sgd = Sgd::new(config, &network);
    let train_pairs = pairs(train);
    let val_pairs = pairs(val);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&Tensor<S>, usize)> = chunk.iter().map(|&i| train_pairs[i]).collect();
            let (loss, grads) = network.batch_gradients(&batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(NnError::DivergedLoss {
                    epoch,
                    batch: batch_no,
                    loss: loss.to_f64_lossless(),
                });
            }
            sgd.step(&mut network, &grads);
        }
        let train_loss = network.batch_loss(&train_pairs)?.to_f64_lossless();
        if !train_loss.is_finite() {
            return Err(NnError::DivergedLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                loss: train_loss,
            });
        }
        let (val_loss, acc) = if val.is_empty() {
            (None, None)
        } else {
            (
                Some(network.batch_loss(&val_pairs)?.to_f64_lossless()),
                Some(accuracy(&network, val)?),
            )
        };
        log::info!("epoch {epoch}: train_loss {train_loss:.6} val_loss {val_loss:?} accuracy {acc:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            accuracy: acc,
        });
    }
    Ok(TrainOutcome { network, log })
}

/// Trains on the manifest's Train split and validates on its Test split.
pub fn train_from_manifest<S: Scalar>(
    manifest: &Manifest,
    base_dir: &Path,
    arch: &Architecture,
    config: &TrainingConfig,
) -> Result<TrainOutcome<S>, NnError> {
    let train_set = load_samples(manifest.split(Split::Train), base_dir, arch.input_shape)?;
    let val_set = load_samples(manifest.split(Split::Test), base_dir, arch.input_shape)?;
    train(&train_set, &val_set, arch, config)
}

