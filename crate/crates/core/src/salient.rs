//! Salient images: successive frames tiled row-major into an R x C mosaic at
//! their original resolution, with resizing applied only to the finished
//! mosaic.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, FrameSequence};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComposeError {
    #[error("expected {expected} frames for the grid, got {got}")]
    WrongFrameCount { expected: usize, got: usize },
    #[error("frame {position} in chunk is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    MixedDimensions {
        position: usize,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("frame indices are not consecutive at chunk position {position}")]
    NonConsecutiveIndices { position: usize },
    #[error("cannot chunk an empty sequence")]
    EmptySequence,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Mosaic layout. `5x3` means 5 rows by 3 columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
}

impl GridSpec {
    /// 15 frames per salient image.
    pub const FIVE_BY_THREE: GridSpec = GridSpec { rows: 5, cols: 3 };
    /// 6 frames per salient image.
    pub const THREE_BY_TWO: GridSpec = GridSpec { rows: 3, cols: 2 };

    pub fn new(rows: usize, cols: usize) -> Result<Self, ComposeError> {
        if rows == 0 || cols == 0 {
            return Err(ComposeError::InvalidGrid(format!(
                "rows and cols must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frames_per_salient(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridSpec {
    type Err = ComposeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ComposeError::InvalidGrid(format!("expected RxC, got {s:?}"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        GridSpec::new(rows, cols)
    }
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailPolicy {
    /// Leftover frames that do not fill a chunk are discarded.
    #[default]
    Drop,
    /// The last partial chunk is completed by repeating its last frame.
    PadLast,
}

impl FromStr for TailPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(TailPolicy::Drop),
            "pad" | "pad-last" => Ok(TailPolicy::PadLast),
            other => Err(format!("unknown tail policy {other:?}, expected drop or pad")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalientImage {
    pub image: Frame,
    pub grid: GridSpec,
    pub source_id: String,
    pub chunk_index: usize,
    pub first_frame_index: usize,
}

impl SalientImage {
    /// Copies cell `(row, col)` back out as a frame.
    pub fn cell(&self, row: usize, col: usize) -> Frame {
        assert!(row < self.grid.rows && col < self.grid.cols, "cell out of range");
        let fw = self.image.width() / self.grid.cols;
        let fh = self.image.height() / self.grid.rows;
        let src = self.image.pixels();
        let stride = self.image.width() * 3;
        let mut pixels = Vec::with_capacity(fw * fh * 3);
        for y in 0..fh {
            let start = (row * fh + y) * stride + col * fw * 3;
            pixels.extend_from_slice(&src[start..start + fw * 3]);
        }
        Frame::new(fw, fh, pixels, self.first_frame_index + row * self.grid.cols + col)
            .expect("cell dimensions are positive")
    }

    /// `{source_id}_{grid}_{chunk_index:06}.ppm`
    pub fn file_name(&self) -> String {
        salient_file_name(&self.source_id, self.grid, self.chunk_index)
    }
}

pub fn salient_file_name(source_id: &str, grid: GridSpec, chunk_index: usize) -> String {
    format!("{source_id}_{grid}_{chunk_index:06}.ppm")
}

fn check_chunk(frames: &[&Frame], expected: usize) -> Result<(), ComposeError> {
    if frames.len() != expected {
        return Err(ComposeError::WrongFrameCount {
            expected,
            got: frames.len(),
        });
    }
    let (w, h) = frames[0].dims();
    for (position, f) in frames.iter().enumerate() {
        if f.dims() != (w, h) {
            return Err(ComposeError::MixedDimensions {
                position,
                expected_w: w,
                expected_h: h,
                found_w: f.width(),
                found_h: f.height(),
            });
        }
        if f.index != frames[0].index + position {
            return Err(ComposeError::NonConsecutiveIndices { position });
        }
    }
    Ok(())
}

fn tile(frames: &[&Frame], grid: GridSpec) -> Frame {
    let (fw, fh) = frames[0].dims();
    let row_bytes = fw * 3;
    let out_w = fw * grid.cols;
    let out_h = fh * grid.rows;
    let mut pixels = vec![0u8; out_w * out_h * 3];
    for (k, f) in frames.iter().enumerate() {
        let (r, c) = (k / grid.cols, k % grid.cols);
        let src = f.pixels();
        for y in 0..fh {
            let dst = ((r * fh + y) * out_w + c * fw) * 3;
            pixels[dst..dst + row_bytes].copy_from_slice(&src[y * row_bytes..(y + 1) * row_bytes]);
        }
    }
    Frame::new(out_w, out_h, pixels, 0).expect("mosaic dimensions are positive")
}

/// Tiles exactly `rows * cols` consecutive, equally sized frames.
pub fn compose(frames: &[Frame], grid: GridSpec) -> Result<SalientImage, ComposeError> {
    let refs: Vec<&Frame> = frames.iter().collect();
    check_chunk(&refs, grid.frames_per_salient())?;
    Ok(SalientImage {
        image: tile(&refs, grid),
        grid,
        source_id: String::new(),
        chunk_index: 0,
        first_frame_index: frames[0].index,
    })
}

/// Splits a sequence into non-overlapping chunks in timeline order and
/// composes each one.
pub fn chunk_and_compose(
    seq: &FrameSequence,
    grid: GridSpec,
    tail: TailPolicy,
) -> Result<Vec<SalientImage>, ComposeError> {
    if seq.is_empty() {
        return Err(ComposeError::EmptySequence);
    }
    let per = grid.frames_per_salient();
    let frames = seq.frames();
    let count = match tail {
        TailPolicy::Drop => frames.len() / per,
        TailPolicy::PadLast => frames.len().div_ceil(per),
    };
    (0..count)
        .into_par_iter()
        .map(|chunk_index| {
            let start = chunk_index * per;
            let end = (start + per).min(frames.len());
            let mut chunk: Vec<&Frame> = frames[start..end].iter().collect();
            check_chunk(&chunk, end - start)?;
            let last = *chunk.last().expect("chunk is non-empty");
            chunk.resize(per, last);
            Ok(SalientImage {
                image: tile(&chunk, grid),
                grid,
                source_id: seq.source_id.clone(),
                chunk_index,
                first_frame_index: frames[start].index,
            })
        })
        .collect()
}

/// Bilinear resize of an interleaved 8-bit raster with `channels` channels.
///
/// Pixel-center alignment: `s = (d + 0.5) * (src / out) - 0.5`, clamped to
/// `[0, src - 1]`. Channels are interpolated independently in `f64` and
/// rounded half away from zero, then clamped to `[0, 255]`.
pub fn resize_bilinear_raw(
    src: &[u8],
    src_w: usize,
    src_h: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<u8> {
    assert!(out_w >= 1 && out_h >= 1, "output dimensions must be positive");
    assert_eq!(src.len(), src_w * src_h * channels, "source buffer size mismatch");
    let taps = |src_len: usize, out_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = src_len as f64 / out_len as f64;
        (0..out_len)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(src_w, out_w);
    let ys = taps(src_h, out_h);
    let mut out = vec![0u8; out_w * out_h * channels];
    let at = |x: usize, y: usize, ch: usize| f64::from(src[(y * src_w + x) * channels + ch]);
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            for ch in 0..channels {
                let top = at(x0, y0, ch) * (1.0 - tx) + at(x1, y0, ch) * tx;
                let bottom = at(x0, y1, ch) * (1.0 - tx) + at(x1, y1, ch) * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                out[(oy * out_w + ox) * channels + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

pub fn resize_bilinear(image: &Frame, out_w: usize, out_h: usize) -> Frame {
    if image.dims() == (out_w, out_h) {
        return image.clone();
    }
    let pixels = resize_bilinear_raw(image.pixels(), image.width(), image.height(), 3, out_w, out_h);
    Frame::new(out_w, out_h, pixels, image.index).expect("resize output dimensions are positive")
}
