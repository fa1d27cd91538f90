//! A small from-scratch convolutional classifier: layers, exact
//! backpropagation, SGD with momentum, Grad-CAM and a binary checkpoint
//! format.

mod checkpoint;
mod gradcam;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{ClassLabel, DatasetError};
use crate::frame::FrameError;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcam::{gradcam, heatmap_to_gray, render_overlay, GradCam};
pub use layer::{softmax, Conv2d, Dense, Layer, LayerSpec};
pub use loss::{cross_entropy, cross_entropy_one_hot, one_hot, softmax_cross_entropy_grad, PROB_EPSILON};
pub use network::{Architecture, Gradients, Network};
pub use optim::{sgd_step, Sgd, TrainingConfig};
pub use tensor::Tensor;
pub use train::{
    frame_to_tensor, load_samples, train, train_from_manifest, EpochLog, Sample, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("class index {0} out of range")]
    InvalidClass(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training samples for class {0}")]
    EmptyClass(ClassLabel),
    #[error("loss diverged to {loss} at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("architecture has no conv layer")]
    NoConvLayer,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{path}: {source}")]
    Frames {
        path: PathBuf,
        #[source]
        source: FrameError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
