//! Labelled salient-image datasets and their JSON-lines manifests.
//!
//! Input layout is `root/{NonViolence,Violence,WeaponizedViolence}/{video_id}/frame_%06d.ppm`.
//! Output images go to `out/{ClassName}/{video_id}_{grid}_{chunk:06}.ppm` and
//! the manifest to `out/manifest.jsonl`, with paths relative to `out`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{read_frame_dir, write_ppm_file, FrameError};
use crate::rng::PinnedRng;
use crate::salient::{chunk_and_compose, ComposeError, GridSpec, TailPolicy};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown class directory {0}")]
    UnknownClassDir(PathBuf),
    #[error("video id {source_id:?} appears under more than one class")]
    DuplicateSourceId { source_id: String },
    #[error("{path}: {source}")]
    Frames {
        path: PathBuf,
        #[source]
        source: FrameError,
    },
    #[error("{path}: {source}")]
    Compose {
        path: PathBuf,
        #[source]
        source: ComposeError,
    },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("duplicate manifest entry {0}")]
    DuplicateRecord(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The three event classes, with fixed integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    NonViolence = 0,
    Violence = 1,
    WeaponizedViolence = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::NonViolence,
        ClassLabel::Violence,
        ClassLabel::WeaponizedViolence,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Directory name used in the input and output layouts.
    pub fn dir_name(self) -> &'static str {
        match self {
            ClassLabel::NonViolence => "NonViolence",
            ClassLabel::Violence => "Violence",
            ClassLabel::WeaponizedViolence => "WeaponizedViolence",
        }
    }

    pub fn from_dir_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.dir_name() == name)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(code) = s.parse::<usize>() {
            return Self::from_code(code).ok_or_else(|| format!("class code {code} out of range"));
        }
        Self::from_dir_name(s).ok_or_else(|| format!("unknown class {s:?}"))
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u64::deserialize(d)?;
        ClassLabel::from_code(code as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("class code {code} out of range")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}, expected train or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub salient_path: String,
    pub label: ClassLabel,
    pub source_id: String,
    pub chunk_index: usize,
    pub grid: GridSpec,
    pub split: Split,
}

impl ManifestRecord {
    fn key(&self) -> (ClassLabel, &str, usize) {
        (self.label, &self.source_id, self.chunk_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, label: ClassLabel, split: Option<Split>) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == label && split.is_none_or(|s| r.split == s))
            .count()
    }

    /// Checks `(source_id, grid, chunk_index)` uniqueness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert((r.source_id.as_str(), r.grid, r.chunk_index)) {
                return Err(DatasetError::DuplicateRecord(r.salient_path.clone()));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let file = fs::File::create(path).map_err(io_at(path))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io_at(path))?;
        w.flush().map_err(io_at(path))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(io_at(path))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_at(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| DatasetError::BadManifest {
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.push(rec);
        }
        let manifest = Manifest { records };
        manifest.validate()?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBuild {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let entry = entry.map_err(io_at(dir))?;
        if entry.file_type().map_err(io_at(dir))?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Composes every video under `root` into salient images written below
/// `out_dir`. All records start in the `Train` split. The manifest is not
/// written; see [`Manifest::write`].
pub fn build_dataset(
    root: &Path,
    grid: GridSpec,
    tail: TailPolicy,
    out_dir: &Path,
) -> Result<DatasetBuild, DatasetError> {
    let mut warnings = Vec::new();
    let mut videos: Vec<(ClassLabel, PathBuf)> = Vec::new();
    let mut class_dirs: BTreeMap<ClassLabel, PathBuf> = BTreeMap::new();
    for dir in sorted_subdirs(root)? {
        let label = ClassLabel::from_dir_name(&dir_name(&dir))
            .ok_or_else(|| DatasetError::UnknownClassDir(dir.clone()))?;
        class_dirs.insert(label, dir);
    }
    let mut seen_ids: HashSet<String> = HashSet::new();
    for label in ClassLabel::ALL {
        let Some(dir) = class_dirs.get(&label) else {
            warnings.push(format!("class directory {} is missing", label.dir_name()));
            continue;
        };
        let vids = sorted_subdirs(dir)?;
        if vids.is_empty() {
            warnings.push(format!("class directory {} has no videos", dir.display()));
        }
        for v in vids {
            let id = dir_name(&v);
            if !seen_ids.insert(id.clone()) {
                return Err(DatasetError::DuplicateSourceId { source_id: id });
            }
            videos.push((label, v));
        }
    }

    let per_video: Vec<Vec<ManifestRecord>> = videos
        .par_iter()
        .map(|(label, vdir)| -> Result<Vec<ManifestRecord>, DatasetError> {
            let seq = read_frame_dir(vdir).map_err(|source| DatasetError::Frames {
                path: vdir.clone(),
                source,
            })?;
            let salient = chunk_and_compose(&seq, grid, tail).map_err(|source| DatasetError::Compose {
                path: vdir.clone(),
                source,
            })?;
            let class_out = out_dir.join(label.dir_name());
            fs::create_dir_all(&class_out).map_err(io_at(&class_out))?;
            salient
                .iter()
                .map(|s| {
                    let name = s.file_name();
                    let path = class_out.join(&name);
                    write_ppm_file(&path, &s.image).map_err(|source| DatasetError::Frames {
                        path: path.clone(),
                        source,
                    })?;
                    Ok(ManifestRecord {
                        salient_path: format!("{}/{}", label.dir_name(), name),
                        label: *label,
                        source_id: s.source_id.clone(),
                        chunk_index: s.chunk_index,
                        grid,
                        split: Split::Train,
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut records: Vec<ManifestRecord> = per_video.into_iter().flatten().collect();
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    for label in ClassLabel::ALL {
        if class_dirs.contains_key(&label) && !records.iter().any(|r| r.label == label) {
            warnings.push(format!("class {label} contributed no salient images"));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let manifest = Manifest { records };
    manifest.validate()?;
    Ok(DatasetBuild { manifest, warnings })
}

/// Rounds half away from zero.
fn round_count(x: f64) -> usize {
    x.round() as usize
}

/// Assigns whole videos to Train or Test. Within each class (in code order)
/// the sorted video ids are shuffled with a single seeded stream and the first
/// `round(test_fraction * n_videos)` become Test. Returns the re-labelled
/// manifest and any degenerate-split warnings.
pub fn split_dataset(
    manifest: &Manifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Vec<String>), DatasetError> {
    if manifest.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let mut rng = PinnedRng::new(seed);
    let mut test_ids: HashSet<String> = HashSet::new();
    let mut warnings = Vec::new();
    for label in ClassLabel::ALL {
        let ids: BTreeSet<&str> = manifest
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.source_id.as_str())
            .collect();
        if ids.is_empty() {
            continue;
        }
        let mut ids: Vec<&str> = ids.into_iter().collect();
        rng.shuffle(&mut ids);
        let n_test = round_count(test_fraction * ids.len() as f64).min(ids.len());
        if n_test == 0 || n_test == ids.len() {
            let side = if n_test == 0 { "test" } else { "train" };
            warnings.push(format!(
                "degenerate split for class {label}: {} video(s) leave the {side} side empty",
                ids.len()
            ));
        }
        test_ids.extend(ids[..n_test].iter().map(|s| s.to_string()));
    }
    for w in &warnings {
        warn!("{w}");
    }
    let records = manifest
        .records
        .iter()
        .map(|r| ManifestRecord {
            split: if test_ids.contains(&r.source_id) {
                Split::Test
            } else {
                Split::Train
            },
            ..r.clone()
        })
        .collect();
    Ok((Manifest { records }, warnings))
}
