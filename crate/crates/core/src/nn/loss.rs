//! Categorical cross-entropy `L = -sum_i y_i ln(p_i)`, with `p_i` clamped
//! below at [`PROB_EPSILON`]. NaN probabilities pass through the clamp so a
//! diverged model still reports a non-finite loss.

use crate::scalar::Scalar;

pub const PROB_EPSILON: f64 = 1e-12;

fn clamp_prob<S: Scalar>(p: S) -> S {
    let eps = S::from_f64_lossy(PROB_EPSILON);
    if p < eps {
        eps
    } else {
        p
    }
}

pub fn cross_entropy<S: Scalar>(y_true: &[S], y_pred: &[S]) -> S {
    assert_eq!(y_true.len(), y_pred.len(), "target and prediction lengths differ");
    let mut loss = S::zero();
    for (&y, &p) in y_true.iter().zip(y_pred) {
        if y != S::zero() {
            loss -= y * clamp_prob(p).ln();
        }
    }
    // -0.0 for a perfect prediction reads oddly in logs
    loss + S::zero()
}

pub fn cross_entropy_one_hot<S: Scalar>(label: usize, y_pred: &[S]) -> S {
    S::zero() - clamp_prob(y_pred[label]).ln()
}

/// Gradient of the one-hot cross-entropy w.r.t. the softmax logits: `p - y`.
pub fn softmax_cross_entropy_grad<S: Scalar>(label: usize, probs: &[S]) -> Vec<S> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == label { p - S::one() } else { p })
        .collect()
}

pub fn one_hot<S: Scalar>(label: usize, classes: usize) -> Vec<S> {
    (0..classes).map(|i| if i == label { S::one() } else { S::zero() }).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn nan_is_not_clamped_away() {
        assert!(super::cross_entropy_one_hot(0, &[f64::NAN, 0.5, 0.5]).is_nan());
        assert!(super::cross_entropy(&[1.0, 0.0], &[f64::NAN, 1.0]).is_nan());
    }

    use super::*;

    #[test]
    fn perfect_prediction_is_zero() {
        assert_eq!(cross_entropy(&[0.0f64, 1.0, 0.0], &[0.0, 1.0, 0.0]), 0.0);
        assert_eq!(cross_entropy_one_hot(1, &[0.0f64, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn uniform_is_ln3() {
        let third = 1.0f64 / 3.0;
        let l = cross_entropy(&[1.0, 0.0, 0.0], &[third, third, third]);
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let l = cross_entropy(&[1.0f64, 0.0, 0.0], &[0.0, 0.5, 0.5]);
        assert_eq!(l, -(1e-12f64).ln());
        assert!(l.is_finite());
    }

    #[test]
    fn loss_is_non_negative() {
        for p in [0.1f64, 0.3, 0.9, 1.0] {
            assert!(cross_entropy(&[0.0, 1.0, 0.0], &[(1.0 - p) / 2.0, p, (1.0 - p) / 2.0]) >= 0.0);
        }
    }
}
