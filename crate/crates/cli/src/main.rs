//! `salient`: batch front end for composition, dataset building, training,
//! evaluation, benchmarking, scoring and Grad-CAM.
//!
//! Exit codes: 0 success, 2 data or input error, 64 usage error, 70 internal
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use salient_core::{ClassLabel, GridSpec, Split, TailPolicy};

pub const EXIT_DATA: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_INTERNAL: u8 = 70;

#[derive(Debug, Parser)]
#[command(name = "salient", version, about = "Salient-image violence detection toolkit")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory that receives every output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Mosaic arrangement, rows x cols.
    #[arg(long, global = true, default_value = "3x2")]
    pub grid: GridSpec,
    /// What to do with trailing frames that do not fill a mosaic.
    #[arg(long, global = true, default_value = "drop")]
    pub tail: TailPolicy,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resize {
    Keep,
    To(usize, usize),
}

impl FromStr for Resize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            return Ok(Resize::Keep);
        }
        let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH or none, got {s:?}"))?;
        match (w.parse::<usize>(), h.parse::<usize>()) {
            (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok(Resize::To(w, h)),
            _ => Err(format!("expected positive WxH, got {s:?}")),
        }
    }
}

/// Which predictor answers `eval` and `bench`.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PredictorChoice {
    /// Built-in network checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Uniform stub that only validates its input.
    #[arg(long)]
    pub stub: bool,
    /// External PWP/1 predictor program.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile frames into salient images.
    Compose {
        /// Frame directory, or - for a PPM stream on stdin.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output size WxH, or none to keep mosaic resolution.
        #[arg(long, default_value = "224x224")]
        resize: Resize,
        /// Source id used in file names (defaults to the directory name).
        #[arg(long)]
        source_id: Option<String>,
    },
    /// Generate synthetic three-class videos as frame directories.
    Synth {
        #[arg(long, default_value_t = 10)]
        videos_per_class: usize,
        #[arg(long, default_value_t = 2)]
        chunks: usize,
    },
    /// Compose a labelled video tree into a salient dataset with a manifest.
    Dataset {
        /// Root with NonViolence/, Violence/ and WeaponizedViolence/.
        #[arg(long)]
        root: PathBuf,
        /// Fraction of source videos per class held out for test.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Train MicroVD on a manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
    },
    /// Predict a manifest split and report accuracy, confusion and F1.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[command(flatten)]
        predictor: PredictorChoice,
        /// Arguments passed to --predictor.
        #[arg(long = "predictor-arg", allow_hyphen_values = true)]
        predictor_args: Vec<String>,
        #[arg(long, default_value = "MicroVD")]
        name: String,
    },
    /// Measure per-input latency over every .ppm in a directory.
    Bench {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = salient_core::bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[command(flatten)]
        predictor: PredictorChoice,
        #[arg(long = "predictor-arg", allow_hyphen_values = true)]
        predictor_args: Vec<String>,
        #[arg(long, default_value = "MicroVD")]
        name: String,
        /// Evaluation report to join into a scorer profile.
        #[arg(long, requires_all = ["params", "layers"])]
        eval_report: Option<PathBuf>,
        /// Parameter count in millions, for the profile.
        #[arg(long)]
        params: Option<f64>,
        /// Layer count, for the profile.
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Score and rank model profiles.
    Score {
        /// CSV or JSON profiles; the bundled comparison table when omitted.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Keep only profiles with this many input frames.
        #[arg(long)]
        cohort: Option<usize>,
        /// Put threshold values in the penalty bucket.
        #[arg(long)]
        strict: bool,
        /// Score differing input_frames as one cohort.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Grad-CAM heatmap and overlay for one salient image.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class name or code.
        #[arg(long)]
        class: ClassLabel,
    },
    /// Answer PWP/1 on stdin/stdout.
    Serve {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        stub: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Frames per salient image to declare; defaults to the grid's.
        #[arg(long)]
        input_frames: Option<usize>,
    },
    /// Run the PWP/1 conformance checks against a predictor.
    Conformance {
        /// Salient PPM sent in predict requests.
        #[arg(long)]
        sample: PathBuf,
        /// External predictor program; the built-in loopback stub otherwise.
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long = "predictor-arg", allow_hyphen_values = true)]
        predictor_args: Vec<String>,
    },
}

/// An error plus the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_DATA,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            error: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
