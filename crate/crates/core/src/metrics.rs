//! Accuracy, confusion matrix and per-class precision / recall / F1.
//!
//! Any ratio whose denominator is zero is reported as 0.

use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassLabel, ManifestRecord};
use crate::nn::cross_entropy_one_hot;
use crate::predictor::{validate_probs, Predictor, PredictorError};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("predictor failed on sample {sample_id}: {source}")]
    PredictorFailure {
        sample_id: String,
        #[source]
        source: PredictorError,
    },
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub true_label: ClassLabel,
    pub probs: [f64; NUM_CLASSES],
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub code: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// Rows are true labels, columns predicted labels.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Mean clamped cross-entropy of the predicted probabilities.
    pub mean_loss: f64,
}

impl MetricsReport {
    pub fn true_positives(&self, k: usize) -> usize {
        self.confusion[k][k]
    }

    pub fn false_positives(&self, k: usize) -> usize {
        (0..NUM_CLASSES).filter(|&t| t != k).map(|t| self.confusion[t][k]).sum()
    }

    pub fn false_negatives(&self, k: usize) -> usize {
        (0..NUM_CLASSES).filter(|&p| p != k).map(|p| self.confusion[k][p]).sum()
    }
}

/// Argmax with ties going to the lowest class code.
pub fn predict_label(probs: &[f64; NUM_CLASSES]) -> ClassLabel {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    ClassLabel::from_code(best).expect("three classes")
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (precision * recall) / (precision + recall)
    }
}

pub fn compute_metrics(records: &[PredictionRecord]) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut loss_sum = 0.0;
    for r in records {
        confusion[r.true_label.code()][predict_label(&r.probs).code()] += 1;
        loss_sum += cross_entropy_one_hot(r.true_label.code(), &r.probs);
    }
    let n = records.len();
    let trace: usize = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
    let per_class = ClassLabel::ALL
        .iter()
        .map(|&label| {
            let k = label.code();
            let tp = confusion[k][k];
            let predicted: usize = (0..NUM_CLASSES).map(|t| confusion[t][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            ClassMetrics {
                class: label.dir_name().to_string(),
                code: k,
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: actual,
            }
        })
        .collect();
    Ok(MetricsReport {
        n,
        confusion,
        accuracy: trace as f64 / n as f64,
        per_class,
        mean_loss: loss_sum / n as f64,
    })
}

/// Report persisted by an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub input_frames: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<PredictionRecord>,
    pub report: EvaluationReport,
}

/// Runs `predictor` over `records` in order. Salient paths are resolved
/// against `base_dir`. Latency is not recorded here (see the bench harness),
/// which keeps prediction files reproducible.
pub fn evaluate<'a>(
    records: impl IntoIterator<Item = &'a ManifestRecord>,
    base_dir: &Path,
    predictor: &mut dyn Predictor,
) -> Result<Evaluation, EvalError> {
    let mut predictions = Vec::new();
    for r in records {
        let path = base_dir.join(&r.salient_path);
        let failure = |source| EvalError::PredictorFailure {
            sample_id: r.salient_path.clone(),
            source,
        };
        let probs = predictor.predict(&r.salient_path, &path).map_err(failure)?;
        validate_probs(&probs).map_err(failure)?;
        predictions.push(PredictionRecord {
            sample_id: r.salient_path.clone(),
            true_label: r.label,
            probs,
            latency_ms: None,
        });
    }
    let metrics = compute_metrics(&predictions)?;
    Ok(Evaluation {
        predictions,
        report: EvaluationReport {
            model: predictor.name().to_string(),
            input_frames: predictor.input_frames(),
            metrics,
        },
    })
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("prediction records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| EvalError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        validate_probs(&rec.probs).map_err(|e| EvalError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
