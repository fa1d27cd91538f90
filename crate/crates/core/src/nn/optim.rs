//! SGD with classical momentum: `v <- mu*v - lr*g; w <- w + v`. With
//! `mu = 0` the update is exactly `w <- w - lr*g`.

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, Network, NnError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 4,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

pub fn sgd_step<S: Scalar>(weights: &mut [S], grads: &[S], velocity: &mut [S], learning_rate: S, momentum: S) {
    assert!(
        weights.len() == grads.len() && grads.len() == velocity.len(),
        "parameter, gradient and velocity lengths differ"
    );
    if momentum == S::zero() {
        for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            *v = -(learning_rate * g);
            *w -= learning_rate * g;
        }
    } else {
        for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            *v = momentum * *v - learning_rate * g;
            *w += *v;
        }
    }
}

/// Momentum state for every parameter of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<S> {
    learning_rate: S,
    momentum: S,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(config: &TrainingConfig, net: &Network<S>) -> Self {
        Self {
            learning_rate: S::from_f64_lossy(config.learning_rate),
            momentum: S::from_f64_lossy(config.momentum),
            velocity: net.param_slices().iter().map(|p| vec![S::zero(); p.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network<S>, grads: &Gradients<S>) {
        for ((w, g), v) in net
            .param_slices_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(self.velocity.iter_mut())
        {
            sgd_step(w, g, v, self.learning_rate, self.momentum);
        }
    }

    pub fn velocity(&self) -> &[Vec<S>] {
        &self.velocity
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let (mut w, mut v) = ([1.0f64], [0.0]);
        sgd_step(&mut w, &[0.5], &mut v, 0.1, 0.0);
        assert_eq!(w[0], 1.0 - 0.1 * 0.5);
        assert!((w[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for mu in [0.0f64, 0.5, 0.9] {
            let (mut w, mut v) = ([3.25f64], [0.0]);
            sgd_step(&mut w, &[0.0], &mut v, 0.01, mu);
            assert_eq!(w[0], 3.25);
        }
    }

    #[test]
    fn momentum_recurrence() {
        let (mut w, mut v) = ([0.0f64], [0.0]);
        sgd_step(&mut w, &[1.0], &mut v, 0.001, 0.9);
        assert!((v[0] + 0.001).abs() < 1e-15);
        assert!((w[0] + 0.001).abs() < 1e-15);
        let before = w[0];
        sgd_step(&mut w, &[1.0], &mut v, 0.001, 0.9);
        assert!((v[0] + 0.0019).abs() < 1e-15);
        assert!((w[0] - before + 0.0019).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = [
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { momentum: 1.0, ..Default::default() },
            TrainingConfig { momentum: -0.1, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
