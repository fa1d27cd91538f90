//! Sequential per-input latency measurement and the derived frame rate.
//!
//! Latency is taken on a monotonic clock from request dispatch to complete
//! response, so for an external predictor it includes the process boundary
//! and serialization.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EvaluationReport;
use crate::predictor::{validate_probs, Predictor, PredictorError};
use crate::salient::GridSpec;
use crate::scorer::ModelProfile;

pub const DEFAULT_WARMUP: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least {needed} inputs, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("predictor failed on {sample_id}: {source}")]
    PredictorFailure {
        sample_id: String,
        #[source]
        source: PredictorError,
    },
    #[error("invalid latency statistics: {0}")]
    InvalidLatency(String),
    #[error("bench result is for {bench:?} but evaluation is for {eval:?}")]
    NameMismatch { bench: String, eval: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub name: String,
    pub input_frames: usize,
    pub n_inputs: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub effective_fps: f64,
    pub warmup_discarded: usize,
    pub host: String,
    pub timestamp_unix: u64,
}

/// Frames per second implied by one salient image every `mean_ms`.
pub fn effective_fps(input_frames: usize, mean_ms: f64) -> f64 {
    input_frames as f64 * 1000.0 / mean_ms
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn host_description() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let hostname = std::fs::read_to_string("/etc/hostname")
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    let mut desc = format!("{}-{} {} cpus", std::env::consts::OS, std::env::consts::ARCH, cpus);
    if !hostname.is_empty() {
        desc = format!("{hostname} ({desc})");
    }
    desc
}

impl BenchResult {
    /// Summarizes latencies measured after warmup. The mean must be positive
    /// and finite.
    pub fn from_latencies(
        name: impl Into<String>,
        input_frames: usize,
        latencies_ms: &[f64],
        warmup_discarded: usize,
    ) -> Result<Self, BenchError> {
        if latencies_ms.is_empty() {
            return Err(BenchError::InsufficientSamples {
                needed: warmup_discarded + 1,
                got: warmup_discarded,
            });
        }
        let mut sorted = latencies_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean_ms = sorted.iter().sum::<f64>() / sorted.len() as f64;
        if !(mean_ms.is_finite() && mean_ms > 0.0) || sorted[0] < 0.0 {
            return Err(BenchError::InvalidLatency(format!("mean {mean_ms} ms")));
        }
        Ok(Self {
            name: name.into(),
            input_frames,
            n_inputs: sorted.len(),
            mean_ms,
            p50_ms: percentile(&sorted, 50.0),
            p95_ms: percentile(&sorted, 95.0),
            effective_fps: effective_fps(input_frames, mean_ms),
            warmup_discarded,
            host: host_description(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }
}

/// Sends each image in turn, one request outstanding at a time, and
/// discards the first `warmup` timings.
pub fn bench(
    predictor: &mut dyn Predictor,
    images: &[PathBuf],
    grid: GridSpec,
    warmup: usize,
) -> Result<BenchResult, BenchError> {
    if images.len() <= warmup {
        return Err(BenchError::InsufficientSamples {
            needed: warmup + 1,
            got: images.len(),
        });
    }
    if predictor.input_frames() != grid.frames_per_salient() {
        log::warn!(
            "predictor {} declares {} input frames but images use grid {grid}",
            predictor.name(),
            predictor.input_frames()
        );
    }
    let mut latencies = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let id = format!("bench-{i}");
        let start = Instant::now();
        let probs = predictor.predict(&id, path);
        let elapsed = start.elapsed();
        let failure = |source| BenchError::PredictorFailure {
            sample_id: path.display().to_string(),
            source,
        };
        validate_probs(&probs.map_err(failure)?).map_err(failure)?;
        latencies.push(elapsed.as_secs_f64() * 1000.0);
    }
    BenchResult::from_latencies(
        predictor.name(),
        grid.frames_per_salient(),
        &latencies[warmup..],
        warmup,
    )
}

/// Joins a timing result with an evaluation into one scorer row.
pub fn profile_from_bench(
    result: &BenchResult,
    eval: &EvaluationReport,
    params_millions: f64,
    num_layers: usize,
) -> Result<ModelProfile, BenchError> {
    if result.name != eval.model {
        return Err(BenchError::NameMismatch {
            bench: result.name.clone(),
            eval: eval.model.clone(),
        });
    }
    Ok(ModelProfile {
        name: result.name.clone(),
        input_frames: result.input_frames,
        params_millions,
        num_layers,
        time_ms: result.mean_ms,
        val_loss: eval.metrics.mean_loss,
        accuracy_pct: eval.metrics.accuracy * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{write_ppm_file, Frame};
    use crate::metrics::MetricsReport;
    use crate::predictor::FnPredictor;
    use std::time::Duration;

    fn report(model: &str, mean_loss: f64, accuracy: f64) -> EvaluationReport {
        EvaluationReport {
            model: model.into(),
            input_frames: 15,
            metrics: MetricsReport {
                n: 100,
                confusion: [[0; 3]; 3],
                accuracy,
                per_class: vec![],
                mean_loss,
            },
        }
    }

    fn fixed(name: &str, mean_ms: f64, frames: usize) -> BenchResult {
        BenchResult::from_latencies(name, frames, &[mean_ms], 0).unwrap()
    }

    #[test]
    fn fps_examples() {
        assert!((effective_fps(15, 154.3) - 97.2).abs() < 0.05);
        assert!((effective_fps(6, 155.0) - 38.7).abs() < 0.05);
        let r = fixed("m", 154.3, 15);
        assert_eq!(r.effective_fps, 15.0 * 1000.0 / 154.3);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        let r = BenchResult::from_latencies("m", 6, &[5.0, 1.0, 9.0, 2.0], 0).unwrap();
        assert!(r.p50_ms <= r.p95_ms);
        assert_eq!((r.p50_ms, r.p95_ms, r.mean_ms), (2.0, 9.0, 4.25));
    }

    #[test]
    fn zero_latency_rejected() {
        assert!(matches!(
            BenchResult::from_latencies("m", 15, &[0.0, 0.0], 0),
            Err(BenchError::InvalidLatency(_))
        ));
    }

    #[test]
    fn profile_matches_table_row() {
        let p = profile_from_bench(&fixed("VGG16", 154.3, 15), &report("VGG16", 0.0667, 0.98), 134.27, 16).unwrap();
        let row = crate::scorer::table3_profiles()[0].clone();
        assert_eq!(p, row);
        assert!(matches!(
            profile_from_bench(&fixed("A", 1.0, 15), &report("B", 0.1, 0.9), 1.0, 1),
            Err(BenchError::NameMismatch { .. })
        ));
    }

    #[test]
    fn sleeping_stub_latency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_ppm_file(&path, &Frame::filled(2, 2, [0, 0, 0], 0).unwrap()).unwrap();
        let images = vec![path; 50];
        let mut stub = FnPredictor {
            name: "sleepy".into(),
            input_frames: 6,
            f: |_: &str, _: &std::path::Path| {
                std::thread::sleep(Duration::from_millis(10));
                Ok([1.0 / 3.0; 3])
            },
        };
        let r = bench(&mut stub, &images, GridSpec::THREE_BY_TWO, 5).unwrap();
        assert_eq!((r.n_inputs, r.warmup_discarded), (45, 5));
        assert!(r.mean_ms >= 10.0 && r.mean_ms <= 13.0, "mean {}", r.mean_ms);
        assert_eq!(r.effective_fps, 6.0 * 1000.0 / r.mean_ms);
    }

    #[test]
    fn too_few_inputs() {
        let mut stub = crate::predictor::ConstantPredictor::uniform("s", 6);
        let images = vec![PathBuf::from("a"); 5];
        assert!(matches!(
            bench(&mut stub, &images, GridSpec::THREE_BY_TWO, 5),
            Err(BenchError::InsufficientSamples { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn failures_propagate() {
        let mut bad = FnPredictor {
            name: "bad".into(),
            input_frames: 6,
            f: |_: &str, _: &std::path::Path| Ok([0.9, 0.9, 0.9]),
        };
        let images = vec![PathBuf::from("a"); 3];
        assert!(matches!(
            bench(&mut bad, &images, GridSpec::THREE_BY_TWO, 0),
            Err(BenchError::PredictorFailure { .. })
        ));
    }
}
