//! Reward/punishment scoring of model profiles on time, validation loss and
//! accuracy, and a deterministic ranking on top of it.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The published comparison table, 15-frame and 6-frame cohorts.
pub const TABLE3_CSV: &str = include_str!("../data/table3.csv");

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("empty cohort")]
    EmptyCohort,
    #[error("profiles mix input_frames {0:?}; pass allow_mixed to score them together")]
    MixedCohort(Vec<usize>),
    #[error("invalid profile {name}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("cannot parse profiles: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub input_frames: usize,
    pub params_millions: f64,
    pub num_layers: usize,
    /// Mean inference time per input.
    pub time_ms: f64,
    pub val_loss: f64,
    pub accuracy_pct: f64,
}

impl ModelProfile {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |reason: &str| {
            Err(ScoreError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.time_ms.is_finite() && self.time_ms > 0.0) {
            return bad("time_ms must be positive");
        }
        if !(self.val_loss.is_finite() && self.val_loss >= 0.0) {
            return bad("val_loss must be non-negative");
        }
        if !(0.0..=100.0).contains(&self.accuracy_pct) {
            return bad("accuracy_pct must lie in [0, 100]");
        }
        if !(self.params_millions.is_finite() && self.params_millions >= 0.0) {
            return bad("params_millions must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub m_time: i32,
    pub m_loss: i32,
    pub m_acc: i32,
    pub total: i32,
}

impl ScoreCard {
    pub fn new(m_time: i32, m_loss: i32, m_acc: i32) -> Self {
        Self {
            m_time,
            m_loss,
            m_acc,
            total: m_time + m_loss + m_acc,
        }
    }
}

/// How threshold values on the loss and accuracy rules are bucketed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Half-open buckets: L = 0.1 scores 0, P = 95 scores 0.
    #[default]
    Adjusted,
    /// Open intervals only; a value on a threshold falls to -1.
    Strict,
}

impl FromStr for BoundaryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adjusted" => Ok(Self::Adjusted),
            "strict" => Ok(Self::Strict),
            _ => Err(format!("unknown boundary mode {s:?}")),
        }
    }
}

/// 1 for each profile strictly faster than the cohort mean, else 0.
pub fn score_time(profiles: &[ModelProfile]) -> Result<Vec<i32>, ScoreError> {
    if profiles.is_empty() {
        return Err(ScoreError::EmptyCohort);
    }
    let mean = profiles.iter().map(|p| p.time_ms).sum::<f64>() / profiles.len() as f64;
    Ok(profiles.iter().map(|p| i32::from(p.time_ms < mean)).collect())
}

pub fn score_loss(loss: f64, mode: BoundaryMode) -> i32 {
    match mode {
        BoundaryMode::Adjusted if loss < 0.1 => 1,
        BoundaryMode::Adjusted if loss < 0.2 => 0,
        BoundaryMode::Strict if loss < 0.1 => 1,
        BoundaryMode::Strict if loss > 0.1 && loss < 0.2 => 0,
        _ => -1,
    }
}

pub fn score_accuracy(pct: f64, mode: BoundaryMode) -> i32 {
    match mode {
        _ if pct > 95.0 => 1,
        BoundaryMode::Adjusted if pct > 90.0 => 0,
        BoundaryMode::Strict if pct > 90.0 && pct < 95.0 => 0,
        _ => -1,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankOptions {
    pub mode: BoundaryMode,
    /// Score profiles with differing input_frames as one cohort.
    pub allow_mixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub profile: ModelProfile,
    pub card: ScoreCard,
}

fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    let (p, q) = (&a.profile, &b.profile);
    b.card
        .total
        .cmp(&a.card.total)
        .then(p.time_ms.total_cmp(&q.time_ms))
        .then(p.val_loss.total_cmp(&q.val_loss))
        .then(p.params_millions.total_cmp(&q.params_millions))
        .then_with(|| p.name.cmp(&q.name))
        .then(p.input_frames.cmp(&q.input_frames))
        .then(p.num_layers.cmp(&q.num_layers))
        .then(p.accuracy_pct.total_cmp(&q.accuracy_pct))
}

/// Scores every profile against the cohort and sorts: total descending,
/// then time, validation loss, parameter count and name ascending.
pub fn rank(profiles: &[ModelProfile], opts: RankOptions) -> Result<Vec<RankedEntry>, ScoreError> {
    for p in profiles {
        p.validate()?;
    }
    let mut frames: Vec<usize> = profiles.iter().map(|p| p.input_frames).collect();
    frames.sort_unstable();
    frames.dedup();
    if frames.len() > 1 && !opts.allow_mixed {
        return Err(ScoreError::MixedCohort(frames));
    }
    let m_time = score_time(profiles)?;
    let mut entries: Vec<RankedEntry> = profiles
        .iter()
        .zip(m_time)
        .map(|(p, t)| RankedEntry {
            rank: 0,
            profile: p.clone(),
            card: ScoreCard::new(t, score_loss(p.val_loss, opts.mode), score_accuracy(p.accuracy_pct, opts.mode)),
        })
        .collect();
    entries.sort_by(rank_order);
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}

/// Accepts a JSON array of profiles or CSV with a header row.
pub fn parse_profiles(text: &str) -> Result<Vec<ModelProfile>, ScoreError> {
    let profiles: Vec<ModelProfile> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| ScoreError::Parse(e.to_string()))?
    } else {
        csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| ScoreError::Parse(e.to_string()))?
    };
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}

pub fn table3_profiles() -> Vec<ModelProfile> {
    parse_profiles(TABLE3_CSV).expect("bundled table parses")
}

pub fn cohort(profiles: &[ModelProfile], input_frames: usize) -> Vec<ModelProfile> {
    profiles.iter().filter(|p| p.input_frames == input_frames).cloned().collect()
}

pub fn render_table(entries: &[RankedEntry]) -> String {
    let header = [
        "Rank", "Model", "Frames", "Param(M)", "Layers", "Time(ms)", "Loss", "Acc(%)", "M_T", "M_L", "M_P", "Total",
    ];
    let rows: Vec<[String; 12]> = entries
        .iter()
        .map(|e| {
            let p = &e.profile;
            [
                e.rank.to_string(),
                p.name.clone(),
                p.input_frames.to_string(),
                p.params_millions.to_string(),
                p.num_layers.to_string(),
                p.time_ms.to_string(),
                p.val_loss.to_string(),
                p.accuracy_pct.to_string(),
                e.card.m_time.to_string(),
                e.card.m_loss.to_string(),
                e.card.m_acc.to_string(),
                e.card.total.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 1 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for row in &rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}
