//! Salient-image preprocessing, a small CNN trained from scratch, evaluation,
//! latency benchmarking and model selection for three-class CCTV violence
//! detection.

pub mod bench;
pub mod dataset;
pub mod frame;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod pwp;
pub mod rng;
pub mod salient;
pub mod scalar;
pub mod scorer;
pub mod synth;

pub use dataset::{ClassLabel, Manifest, ManifestRecord, Split};
pub use frame::{Frame, FrameSequence};
pub use nn::{Architecture, Network, Tensor, TrainingConfig};
pub use predictor::{Predictor, PredictorError};
pub use rng::PinnedRng;
pub use salient::{GridSpec, SalientImage, TailPolicy};
pub use scalar::Scalar;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Network64 = Network<f64>;
pub type Network32 = Network<f32>;
/// The reference network in its default precision.
pub type MicroVd = Network<f64>;
