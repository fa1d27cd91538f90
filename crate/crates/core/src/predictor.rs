//! The predictor contract shared by the built-in network, test stubs and
//! external processes speaking PWP/1.

use std::path::Path;

use thiserror::Error;

use crate::frame::read_ppm_file;
use crate::metrics::NUM_CLASSES;
use crate::nn::{frame_to_tensor, Network};
use crate::scalar::Scalar;

/// Tolerance on the probability sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("malformed probabilities: {0}")]
    MalformedProbs(String),
    #[error("predictor reported an error: {0}")]
    Remote(String),
    #[error("cannot load input: {0}")]
    Input(String),
    #[error("predictor exited with {0}")]
    Exit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Something that maps a salient image on disk to three class probabilities.
pub trait Predictor {
    fn name(&self) -> &str;

    /// Frames per salient image the predictor was built for.
    fn input_frames(&self) -> usize;

    fn predict(&mut self, id: &str, path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError>;
}

/// Three finite, non-negative values summing to 1 within
/// [`PROB_SUM_TOLERANCE`].
pub fn validate_probs(probs: &[f64]) -> Result<(), PredictorError> {
    if probs.len() != NUM_CLASSES {
        return Err(PredictorError::MalformedProbs(format!(
            "expected {NUM_CLASSES} values, got {}",
            probs.len()
        )));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(PredictorError::MalformedProbs(format!("invalid value {bad}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(PredictorError::MalformedProbs(format!("values sum to {sum}")));
    }
    Ok(())
}

/// Returns the same probabilities for every input.
#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    pub name: String,
    pub input_frames: usize,
    pub probs: [f64; NUM_CLASSES],
}

impl ConstantPredictor {
    pub fn uniform(name: impl Into<String>, input_frames: usize) -> Self {
        Self {
            name: name.into(),
            input_frames,
            probs: [1.0 / 3.0; NUM_CLASSES],
        }
    }
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn predict(&mut self, _id: &str, _path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError> {
        Ok(self.probs)
    }
}

/// Loads and validates the input image, then answers uniformly. Used as the
/// built-in protocol stub.
#[derive(Debug, Clone)]
pub struct UniformStub {
    pub name: String,
    pub input_frames: usize,
}

impl Predictor for UniformStub {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn predict(&mut self, _id: &str, path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError> {
        read_ppm_file(path).map_err(|e| PredictorError::Input(e.to_string()))?;
        Ok([1.0 / 3.0; NUM_CLASSES])
    }
}

/// Wraps a closure; handy for stubs with side effects.
pub struct FnPredictor<F> {
    pub name: String,
    pub input_frames: usize,
    pub f: F,
}

impl<F> Predictor for FnPredictor<F>
where
    F: FnMut(&str, &Path) -> Result<[f64; NUM_CLASSES], PredictorError>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn predict(&mut self, id: &str, path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError> {
        (self.f)(id, path)
    }
}

/// The built-in network: loads the PPM, resizes to the network input and
/// runs a forward pass.
#[derive(Debug, Clone)]
pub struct ModelPredictor<S> {
    pub name: String,
    pub input_frames: usize,
    pub network: Network<S>,
}

impl<S: Scalar> ModelPredictor<S> {
    pub fn new(name: impl Into<String>, input_frames: usize, network: Network<S>) -> Result<Self, PredictorError> {
        if network.num_classes() != NUM_CLASSES {
            return Err(PredictorError::Input(format!(
                "network has {} classes, expected {NUM_CLASSES}",
                network.num_classes()
            )));
        }
        Ok(Self {
            name: name.into(),
            input_frames,
            network,
        })
    }
}

impl<S: Scalar> Predictor for ModelPredictor<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn predict(&mut self, _id: &str, path: &Path) -> Result<[f64; NUM_CLASSES], PredictorError> {
        let frame = read_ppm_file(path).map_err(|e| PredictorError::Input(e.to_string()))?;
        let input = frame_to_tensor::<S>(&frame, self.network.input_shape())
            .map_err(|e| PredictorError::Input(e.to_string()))?;
        let probs = self
            .network
            .forward(&input)
            .map_err(|e| PredictorError::Input(e.to_string()))?;
        let mut out = [0.0; NUM_CLASSES];
        for (o, p) in out.iter_mut().zip(probs.data()) {
            *o = p.to_f64_lossless();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_validation() {
        assert!(validate_probs(&[0.2, 0.3, 0.5]).is_ok());
        assert!(validate_probs(&[1.0 / 3.0; 3]).is_ok());
        assert!(validate_probs(&[0.5, 0.5]).is_err());
        assert!(validate_probs(&[0.5, 0.6, -0.1]).is_err());
        assert!(validate_probs(&[0.5, 0.5, 0.1]).is_err());
        assert!(validate_probs(&[f64::NAN, 0.5, 0.5]).is_err());
        assert!(validate_probs(&[0.3, 0.3, 0.4 + 5e-7]).is_ok());
    }

    #[test]
    fn stub_reads_its_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        crate::frame::write_ppm_file(&path, &crate::frame::Frame::filled(2, 2, [1, 2, 3], 0).unwrap()).unwrap();
        let mut stub = UniformStub {
            name: "stub".into(),
            input_frames: 6,
        };
        assert_eq!(stub.predict("a", &path).unwrap(), [1.0 / 3.0; 3]);
        assert!(matches!(
            stub.predict("b", &dir.path().join("missing.ppm")),
            Err(PredictorError::Input(_))
        ));
    }
}
