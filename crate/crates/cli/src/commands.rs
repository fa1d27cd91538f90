use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::Context;
use salient_core::bench::{bench, profile_from_bench};
use salient_core::dataset::{build_dataset, split_dataset, Manifest, MANIFEST_FILE};
use salient_core::frame::{encode_pgm, read_frame_dir, read_frame_stream, read_ppm_file, write_ppm_file};
use salient_core::metrics::{evaluate, predictions_to_jsonl, EvaluationReport};
use salient_core::nn::{
    frame_to_tensor, gradcam, heatmap_to_gray, read_checkpoint, render_overlay, train_from_manifest,
    write_checkpoint,
};
use salient_core::predictor::{ModelPredictor, UniformStub};
use salient_core::pwp::{run_conformance, serve, PwpClient};
use salient_core::salient::{chunk_and_compose, resize_bilinear};
use salient_core::scorer::{parse_profiles, rank, render_table, BoundaryMode, RankOptions, TABLE3_CSV};
use salient_core::synth::{write_synthetic_dataset, SynthConfig};
use salient_core::{Architecture, Predictor, TrainingConfig};

use crate::{Cli, Command, Failure, PredictorChoice, Resize};

type Outcome = Result<(), Failure>;

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    let dir = cli
        .out
        .as_deref()
        .ok_or_else(|| Failure::usage("this command needs --out"))?;
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::data)?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::data)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(Failure::internal)?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::data)?;
    serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(Failure::data)
}

fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf), Failure> {
    let manifest = Manifest::read(path).map_err(Failure::data)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

/// A predictor that may need an orderly shutdown.
enum Selected {
    Local(Box<dyn Predictor>),
    Remote(PwpClient),
}

impl Selected {
    fn as_dyn(&mut self) -> &mut dyn Predictor {
        match self {
            Selected::Local(p) => p.as_mut(),
            Selected::Remote(c) => c,
        }
    }

    fn finish(self) -> Outcome {
        match self {
            Selected::Local(_) => Ok(()),
            Selected::Remote(c) => c.shutdown().map_err(Failure::data),
        }
    }
}

fn select(cli: &Cli, choice: &PredictorChoice, args: &[String], name: &str) -> Result<Selected, Failure> {
    let frames = cli.grid.frames_per_salient();
    if let Some(path) = &choice.checkpoint {
        let (net, _) = read_checkpoint::<f64>(path).map_err(Failure::data)?;
        let p = ModelPredictor::new(name, frames, net).map_err(Failure::data)?;
        Ok(Selected::Local(Box::new(p)))
    } else if choice.stub {
        Ok(Selected::Local(Box::new(UniformStub {
            name: name.to_string(),
            input_frames: frames,
        })))
    } else if let Some(program) = &choice.predictor {
        let client = PwpClient::spawn(program, args)
            .with_context(|| format!("cannot start predictor {}", program.display()))
            .map_err(Failure::data)?;
        Ok(Selected::Remote(client))
    } else {
        Err(Failure::usage("choose --checkpoint, --stub or --predictor"))
    }
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Compose {
            input,
            resize,
            source_id,
        } => compose(cli, input, *resize, source_id.as_deref()),
        Command::Synth { videos_per_class, chunks } => {
            let out = out_dir(cli)?;
            let cfg = SynthConfig {
                grid: cli.grid,
                ..Default::default()
            };
            let n = write_synthetic_dataset(out, *videos_per_class, *chunks, &cfg, cli.seed).map_err(Failure::data)?;
            println!("wrote {n} videos to {}", out.display());
            Ok(())
        }
        Command::Dataset { root, test_fraction } => {
            let out = out_dir(cli)?;
            let built = build_dataset(root, cli.grid, cli.tail, out).map_err(Failure::data)?;
            let (manifest, _) = split_dataset(&built.manifest, *test_fraction, cli.seed).map_err(Failure::data)?;
            manifest.write(&out.join(MANIFEST_FILE)).map_err(Failure::data)?;
            println!(
                "{} salient images ({} train, {} test) in {}",
                manifest.len(),
                manifest.split(salient_core::Split::Train).count(),
                manifest.split(salient_core::Split::Test).count(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            manifest,
            epochs,
            learning_rate,
            momentum,
            batch_size,
        } => {
            let config = TrainingConfig {
                learning_rate: *learning_rate,
                momentum: *momentum,
                batch_size: *batch_size,
                epochs: *epochs,
                seed: cli.seed,
            };
            config.validate().map_err(|e| Failure::usage(e.to_string()))?;
            let out = out_dir(cli)?;
            let (manifest, base) = read_manifest(manifest)?;
            let outcome = train_from_manifest::<f64>(&manifest, &base, &Architecture::micro_vd(), &config)
                .map_err(Failure::data)?;
            write_checkpoint(&out.join("model.ckpt"), &outcome.network, Some(cli.seed)).map_err(Failure::data)?;
            let mut log = String::new();
            for e in &outcome.log {
                log.push_str(&serde_json::to_string(e).map_err(Failure::internal)?);
                log.push('\n');
            }
            write(&out.join("train_log.jsonl"), log)?;
            if let Some(last) = outcome.log.last() {
                println!("epoch {}: train loss {:.6}", last.epoch, last.train_loss);
            }
            Ok(())
        }
        Command::Eval {
            manifest,
            split,
            predictor,
            predictor_args,
            name,
        } => {
            let out = out_dir(cli)?;
            let (manifest, base) = read_manifest(manifest)?;
            let mut selected = select(cli, predictor, predictor_args, name)?;
            let eval = evaluate(manifest.split(*split), &base, selected.as_dyn()).map_err(Failure::data)?;
            selected.finish()?;
            write(&out.join("predictions.jsonl"), predictions_to_jsonl(&eval.predictions))?;
            write(&out.join("report.json"), to_json(&eval.report)?)?;
            let m = &eval.report.metrics;
            println!("{} samples, accuracy {:.4}, mean loss {:.6}", m.n, m.accuracy, m.mean_loss);
            Ok(())
        }
        Command::Bench {
            images,
            warmup,
            predictor,
            predictor_args,
            name,
            eval_report,
            params,
            layers,
        } => {
            let out = out_dir(cli)?;
            let mut paths: Vec<PathBuf> = fs::read_dir(images)
                .with_context(|| format!("cannot read {}", images.display()))
                .map_err(Failure::data)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
                .collect();
            paths.sort();
            let mut selected = select(cli, predictor, predictor_args, name)?;
            let result = bench(selected.as_dyn(), &paths, cli.grid, *warmup).map_err(Failure::data)?;
            selected.finish()?;
            write(&out.join("bench.json"), to_json(&result)?)?;
            println!(
                "{}: mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms, {:.1} fps over {} inputs",
                result.name, result.mean_ms, result.p50_ms, result.p95_ms, result.effective_fps, result.n_inputs
            );
            if let (Some(report), Some(params), Some(layers)) = (eval_report, params, layers) {
                let report: EvaluationReport = read_json(report)?;
                let profile = profile_from_bench(&result, &report, *params, *layers).map_err(Failure::data)?;
                write(&out.join("profile.json"), to_json(&profile)?)?;
            }
            Ok(())
        }
        Command::Score {
            profiles,
            cohort,
            strict,
            allow_mixed,
        } => {
            let text = match profiles {
                Some(path) => fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))
                    .map_err(Failure::data)?,
                None => TABLE3_CSV.to_string(),
            };
            let mut all = parse_profiles(&text).map_err(Failure::data)?;
            if let Some(frames) = cohort {
                all.retain(|p| p.input_frames == *frames);
            }
            let opts = RankOptions {
                mode: if *strict { BoundaryMode::Strict } else { BoundaryMode::Adjusted },
                allow_mixed: *allow_mixed,
            };
            let ranked = rank(&all, opts).map_err(Failure::data)?;
            let table = render_table(&ranked);
            print!("{table}");
            if cli.out.is_some() {
                let out = out_dir(cli)?;
                write(&out.join("ranking.json"), to_json(&ranked)?)?;
                write(&out.join("ranking.txt"), table)?;
            }
            Ok(())
        }
        Command::Gradcam {
            checkpoint,
            image,
            class,
        } => {
            let out = out_dir(cli)?;
            let (net, _) = read_checkpoint::<f64>(checkpoint).map_err(Failure::data)?;
            let frame = read_ppm_file(image).map_err(Failure::data)?;
            let input = frame_to_tensor::<f64>(&frame, net.input_shape()).map_err(Failure::data)?;
            let probs = net.forward(&input).map_err(Failure::data)?;
            let cam = gradcam(&net, &input, class.code()).map_err(Failure::data)?;
            let (h, w) = (cam.heatmap.shape()[0], cam.heatmap.shape()[1]);
            let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let prefix = format!("{stem}_{}", class.dir_name());
            write(&out.join(format!("{prefix}_heatmap.pgm")), encode_pgm(w, h, &heatmap_to_gray(&cam.heatmap)))?;
            write_ppm_file(&out.join(format!("{prefix}_overlay.ppm")), &render_overlay(&frame, &cam.heatmap))
                .map_err(Failure::data)?;
            println!("probabilities {:?}", probs.data());
            Ok(())
        }
        Command::Serve {
            stub,
            checkpoint,
            name,
            input_frames,
        } => {
            let frames = input_frames.unwrap_or(cli.grid.frames_per_salient());
            let mut predictor: Box<dyn Predictor> = match (stub, checkpoint) {
                (true, _) => Box::new(UniformStub {
                    name: name.clone().unwrap_or_else(|| "stub".into()),
                    input_frames: frames,
                }),
                (false, Some(path)) => {
                    let (net, _) = read_checkpoint::<f64>(path).map_err(Failure::data)?;
                    let name = name.clone().unwrap_or_else(|| "MicroVD".into());
                    Box::new(ModelPredictor::new(name, frames, net).map_err(Failure::data)?)
                }
                (false, None) => return Err(Failure::usage("serve needs --stub or --checkpoint")),
            };
            serve(io::stdin().lock(), io::stdout().lock(), predictor.as_mut()).map_err(Failure::data)
        }
        Command::Conformance {
            sample,
            predictor,
            predictor_args,
        } => {
            let frames = cli.grid.frames_per_salient();
            let mut connect = || match predictor {
                Some(program) => PwpClient::spawn(program, predictor_args),
                None => PwpClient::loopback(UniformStub {
                    name: "loopback-stub".into(),
                    input_frames: frames,
                }),
            };
            let results = run_conformance(&mut connect, sample);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Failure::data(anyhow::anyhow!("{failed} conformance checks failed")));
            }
            Ok(())
        }
    }
}

fn compose(cli: &Cli, input: &Path, resize: Resize, source_id: Option<&str>) -> Outcome {
    let out = out_dir(cli)?;
    let mut seq = if input == Path::new("-") {
        read_frame_stream(io::stdin().lock(), source_id.unwrap_or("stream")).map_err(Failure::data)?
    } else {
        read_frame_dir(input)
            .with_context(|| format!("cannot read frames from {}", input.display()))
            .map_err(Failure::data)?
    };
    if let Some(id) = source_id {
        seq.source_id = id.to_string();
    }
    let images = chunk_and_compose(&seq, cli.grid, cli.tail).map_err(Failure::data)?;
    for s in &images {
        let image = match resize {
            Resize::Keep => s.image.clone(),
            Resize::To(w, h) => resize_bilinear(&s.image, w, h),
        };
        write_ppm_file(&out.join(s.file_name()), &image).map_err(Failure::data)?;
    }
    println!("wrote {} salient images to {}", images.len(), out.display());
    Ok(())
}
