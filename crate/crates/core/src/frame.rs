//! Frames and the binary PPM (P6, maxval 255) interchange format.
//!
//! Decoding accepts `#` comments anywhere in the header; encoding always
//! writes the canonical header `P6\n{w} {h}\n255\n`.

use std::fs;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    MaxvalUnsupported(u64),
    #[error("truncated raster: expected {expected} bytes, got {got}")]
    TruncatedRaster { expected: usize, got: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("missing frame index {0}")]
    MissingIndex(usize),
    #[error("frame {index} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    MixedDimensions {
        index: usize,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("no frames found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("invalid meta.json in {path}: {reason}")]
    BadMetadata { path: PathBuf, reason: String },
    #[error("frame {index} of stream: {source}")]
    InStream {
        index: usize,
        #[source]
        source: Box<FrameError>,
    },
    #[error("{path}: {source}")]
    AtPath {
        path: PathBuf,
        #[source]
        source: Box<FrameError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FrameError {
    /// Strips stream-position and path context.
    pub fn root(&self) -> &FrameError {
        match self {
            FrameError::InStream { source, .. } | FrameError::AtPath { source, .. } => source.root(),
            other => other,
        }
    }

    fn at_path(self, path: &Path) -> Self {
        FrameError::AtPath {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = FrameError> = std::result::Result<T, E>;

/// One RGB raster, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    /// 0-based position in the source sequence.
    pub index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, index: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FrameError::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| FrameError::InvalidFrame("dimensions overflow".into()))?;
        if pixels.len() != expected {
            return Err(FrameError::InvalidFrame(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            index,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3], index: usize) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width.saturating_mul(height).saturating_mul(3))
            .collect();
        Self::new(width, height, pixels, index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// Ordered frames of one video, indices `0..n` without gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub fps: Option<f64>,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: Option<f64>, source_id: impl Into<String>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let (w, h) = first.dims();
            for (i, f) in frames.iter().enumerate() {
                if f.index != i {
                    return Err(FrameError::MissingIndex(i));
                }
                if f.dims() != (w, h) {
                    return Err(FrameError::MixedDimensions {
                        index: i,
                        expected_w: w,
                        expected_h: h,
                        found_w: f.width(),
                        found_h: f.height(),
                    });
                }
            }
        }
        if let Some(fps) = fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(FrameError::InvalidFrame(format!("fps must be positive, got {fps}")));
            }
        }
        Ok(Self {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Byte-at-a-time header scanner over any buffered reader.
struct HeaderScanner<'a, R: BufRead> {
    reader: &'a mut R,
}

impl<R: BufRead> HeaderScanner<'_, R> {
    fn peek(&mut self) -> io::Result<Option<u8>> {
        Ok(self.reader.fill_buf()?.first().copied())
    }

    fn bump(&mut self) -> io::Result<Option<u8>> {
        let b = self.peek()?;
        if b.is_some() {
            self.reader.consume(1);
        }
        Ok(b)
    }

    fn skip_space_and_comments(&mut self) -> io::Result<()> {
        while let Some(b) = self.peek()? {
            if is_space(b) {
                self.reader.consume(1);
            } else if b == b'#' {
                while let Some(c) = self.bump()? {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments()?;
        let mut value: u64 = 0;
        let mut digits = 0;
        while let Some(b) = self.peek()? {
            if !b.is_ascii_digit() {
                break;
            }
            self.reader.consume(1);
            digits += 1;
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or_else(|| FrameError::MalformedHeader(format!("{what} overflows")))?;
        }
        if digits == 0 {
            return Err(FrameError::MalformedHeader(format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Reads one PPM from `reader`. Returns `Ok(None)` on a clean end of input
/// before the first header byte.
fn read_ppm<R: BufRead>(reader: &mut R, index: usize) -> Result<Option<Frame>> {
    let mut scan = HeaderScanner { reader };
    let Some(m0) = scan.bump()? else {
        return Ok(None);
    };
    let m1 = scan.bump()?;
    if m0 != b'P' || m1 != Some(b'6') {
        return Err(FrameError::MalformedHeader("magic is not P6".into()));
    }
    match scan.peek()? {
        Some(b) if is_space(b) || b == b'#' => {}
        _ => return Err(FrameError::MalformedHeader("no separator after magic".into())),
    }
    let width = scan.number("width")?;
    let height = scan.number("height")?;
    let maxval = scan.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(FrameError::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(FrameError::MaxvalUnsupported(maxval));
    }
    match scan.bump()? {
        Some(b) if is_space(b) => {}
        _ => {
            return Err(FrameError::MalformedHeader(
                "expected single whitespace byte after maxval".into(),
            ))
        }
    }
    let expected = usize::try_from(width)
        .ok()
        .zip(usize::try_from(height).ok())
        .and_then(|(w, h)| w.checked_mul(h)?.checked_mul(3))
        .ok_or_else(|| FrameError::MalformedHeader("dimensions overflow".into()))?;
    let mut pixels = Vec::with_capacity(expected.min(1 << 28));
    let got = scan.reader.take(expected as u64).read_to_end(&mut pixels)?;
    if got < expected {
        return Err(FrameError::TruncatedRaster { expected, got });
    }
    Frame::new(width as usize, height as usize, pixels, index).map(Some)
}

/// Decodes a single P6 image. Bytes after the raster are ignored.
pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let mut cursor = bytes;
    read_ppm(&mut cursor, 0)?
        .ok_or_else(|| FrameError::MalformedHeader("empty input".into()))
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

/// Binary graymap (P5, maxval 255) with the canonical header.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "gray buffer size mismatch");
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + gray.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(gray);
    out
}

pub fn read_ppm_file(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| FrameError::from(e).at_path(path))?;
    decode_ppm(&bytes).map_err(|e| e.at_path(path))
}

pub fn write_ppm_file(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_ppm(frame)).map_err(|e| FrameError::from(e).at_path(path))
}

/// Concatenated P6 images until end of stream.
pub fn read_frame_stream<R: Read>(stream: R, source_id: impl Into<String>) -> Result<FrameSequence> {
    let mut reader = BufReader::new(stream);
    let mut frames: Vec<Frame> = Vec::new();
    loop {
        let index = frames.len();
        let frame = match read_ppm(&mut reader, index) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                return Err(FrameError::InStream {
                    index,
                    source: Box::new(e),
                })
            }
        };
        if let Some(first) = frames.first() {
            if first.dims() != frame.dims() {
                return Err(FrameError::MixedDimensions {
                    index,
                    expected_w: first.width(),
                    expected_h: first.height(),
                    found_w: frame.width(),
                    found_h: frame.height(),
                });
            }
        }
        frames.push(frame);
    }
    FrameSequence::new(frames, None, source_id)
}

/// Parses `frame_NNNNNN.ppm` (six or more digits) into its index.
pub fn parse_frame_file_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".ppm")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

fn read_fps(dir: &Path) -> Result<Option<f64>> {
    let path = dir.join("meta.json");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(FrameError::from(e).at_path(&path)),
    };
    let bad = |reason: String| FrameError::BadMetadata {
        path: path.clone(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match value.get("fps") {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|f| f.is_finite() && *f > 0.0)
            .map(Some)
            .ok_or_else(|| bad(format!("fps must be a positive number, got {v}"))),
    }
}

/// Reads a `frame_%06d.ppm` directory plus optional `meta.json`. The source
/// id is the directory name.
pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| FrameError::from(e).at_path(dir))?;
    let mut numbered: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| FrameError::from(e).at_path(dir))?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(parse_frame_file_name) {
            numbered.push((idx, entry.path()));
        }
    }
    if numbered.is_empty() {
        return Err(FrameError::EmptyDirectory(dir.to_path_buf()));
    }
    numbered.sort_by_key(|(i, _)| *i);
    for (expected, (idx, _)) in numbered.iter().enumerate() {
        if *idx != expected {
            return Err(FrameError::MissingIndex(expected).at_path(dir));
        }
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(numbered.len());
    for (idx, path) in &numbered {
        let frame = read_ppm_file(path)?.with_index(*idx);
        if let Some(first) = frames.first() {
            if first.dims() != frame.dims() {
                return Err(FrameError::MixedDimensions {
                    index: *idx,
                    expected_w: first.width(),
                    expected_h: first.height(),
                    found_w: frame.width(),
                    found_h: frame.height(),
                }
                .at_path(path));
            }
        }
        frames.push(frame);
    }
    let fps = read_fps(dir)?;
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameSequence::new(frames, fps, source_id)
}

/// Writes a sequence in the frame-directory convention. `meta.json` is
/// written only when the sequence carries an fps.
pub fn write_frame_dir(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FrameError::from(e).at_path(dir))?;
    for f in seq.frames() {
        write_ppm_file(&dir.join(frame_file_name(f.index)), f)?;
    }
    if let Some(fps) = seq.fps {
        let path = dir.join("meta.json");
        let body = serde_json::json!({ "fps": fps }).to_string();
        fs::write(&path, body).map_err(|e| FrameError::from(e).at_path(&path))?;
    }
    Ok(())
}
