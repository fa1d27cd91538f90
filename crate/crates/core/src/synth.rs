//! Synthetic three-class videos for exercising the pipeline end to end.
//!
//! Each video shows a bright square bouncing over dark noise. The square is
//! drawn only in frames that land in one horizontal third of the mosaic, and
//! that third is the class.

use std::path::Path;

use crate::dataset::{ClassLabel, DatasetError};
use crate::frame::{write_frame_dir, Frame, FrameSequence};
use crate::rng::PinnedRng;
use crate::salient::{compose, ComposeError, GridSpec, SalientImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    pub grid: GridSpec,
    pub square: usize,
    /// Background noise is uniform in `0..noise_max`.
    pub noise_max: u8,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_width: 32,
            frame_height: 24,
            grid: GridSpec::THREE_BY_TWO,
            square: 8,
            noise_max: 64,
            fps: 30.0,
        }
    }
}

impl SynthConfig {
    fn check(&self) -> Result<(), ComposeError> {
        if self.grid.rows() < 3 {
            return Err(ComposeError::InvalidGrid(format!(
                "synthetic task needs at least 3 rows, got {}",
                self.grid
            )));
        }
        if self.square == 0 || self.square > self.frame_width || self.square > self.frame_height {
            return Err(ComposeError::InvalidGrid(format!(
                "square {} does not fit a {}x{} frame",
                self.square, self.frame_width, self.frame_height
            )));
        }
        Ok(())
    }

    /// Which third of the mosaic frame `i` falls into.
    pub fn third_of(&self, i: usize) -> usize {
        let per = self.grid.frames_per_salient();
        let row = (i % per) / self.grid.cols();
        row * 3 / self.grid.rows()
    }
}

fn signed_speed(rng: &mut PinnedRng) -> isize {
    let s = 1 + rng.below(3) as isize;
    if rng.below(2) == 0 {
        s
    } else {
        -s
    }
}

fn advance(pos: &mut isize, vel: &mut isize, max: isize) {
    *pos += *vel;
    if *pos < 0 {
        *pos = -*pos;
        *vel = -*vel;
    } else if *pos > max {
        *pos = 2 * max - *pos;
        *vel = -*vel;
    }
    *pos = (*pos).clamp(0, max);
}

/// `chunks` salient images' worth of frames for one video of class `label`.
pub fn synth_video(
    label: ClassLabel,
    chunks: usize,
    cfg: &SynthConfig,
    rng: &mut PinnedRng,
) -> Result<Vec<Frame>, ComposeError> {
    cfg.check()?;
    let (w, h, sq) = (cfg.frame_width, cfg.frame_height, cfg.square);
    let (max_x, max_y) = ((w - sq) as isize, (h - sq) as isize);
    let mut x = rng.below(w - sq + 1) as isize;
    let mut y = rng.below(h - sq + 1) as isize;
    let (mut vx, mut vy) = (signed_speed(rng), signed_speed(rng));
    let color = [
        200 + rng.below(56) as u8,
        200 + rng.below(56) as u8,
        200 + rng.below(56) as u8,
    ];
    let n = chunks * cfg.grid.frames_per_salient();
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let mut px: Vec<u8> = (0..w * h * 3).map(|_| rng.below(cfg.noise_max as usize) as u8).collect();
        if cfg.third_of(i) == label.code() {
            for yy in y as usize..y as usize + sq {
                for xx in x as usize..x as usize + sq {
                    let o = (yy * w + xx) * 3;
                    px[o..o + 3].copy_from_slice(&color);
                }
            }
        }
        frames.push(Frame::new(w, h, px, i).expect("frame geometry is consistent"));
        advance(&mut x, &mut vx, max_x);
        advance(&mut y, &mut vy, max_y);
    }
    Ok(frames)
}

/// `per_class` single-chunk salient images per class, classes interleaved
/// in code order.
pub fn synth_salients(
    per_class: usize,
    cfg: &SynthConfig,
    rng: &mut PinnedRng,
) -> Result<Vec<(ClassLabel, SalientImage)>, ComposeError> {
    let mut out = Vec::with_capacity(per_class * 3);
    for i in 0..per_class {
        for label in ClassLabel::ALL {
            let frames = synth_video(label, 1, cfg, rng)?;
            let mut s = compose(&frames, cfg.grid)?;
            s.source_id = format!("{}-{i:04}", short_name(label));
            out.push((label, s));
        }
    }
    Ok(out)
}

fn short_name(label: ClassLabel) -> &'static str {
    match label {
        ClassLabel::NonViolence => "nv",
        ClassLabel::Violence => "v",
        ClassLabel::WeaponizedViolence => "wv",
    }
}

/// Writes `videos_per_class` frame directories per class under `root` in the
/// layout `build_dataset` reads. Returns the number of videos written.
pub fn write_synthetic_dataset(
    root: &Path,
    videos_per_class: usize,
    chunks_per_video: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<usize, DatasetError> {
    let mut rng = PinnedRng::new(seed);
    let mut written = 0;
    for label in ClassLabel::ALL {
        for i in 0..videos_per_class {
            let id = format!("{}-{i:04}", short_name(label));
            let dir = root.join(label.dir_name()).join(&id);
            let frames = synth_video(label, chunks_per_video, cfg, &mut rng).map_err(|source| DatasetError::Compose {
                path: dir.clone(),
                source,
            })?;
            let seq = FrameSequence::new(frames, Some(cfg.fps), id).map_err(|source| DatasetError::Frames {
                path: dir.clone(),
                source,
            })?;
            write_frame_dir(&dir, &seq).map_err(|source| DatasetError::Frames {
                path: dir.clone(),
                source,
            })?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bright(f: &Frame) -> usize {
        f.pixels().chunks(3).filter(|p| p.iter().all(|&c| c >= 200)).count()
    }

    #[test]
    fn square_only_in_class_third() {
        let cfg = SynthConfig::default();
        let mut rng = PinnedRng::new(1);
        for label in ClassLabel::ALL {
            let frames = synth_video(label, 2, &cfg, &mut rng).unwrap();
            assert_eq!(frames.len(), 12);
            for (i, f) in frames.iter().enumerate() {
                let expected = if cfg.third_of(i) == label.code() { 64 } else { 0 };
                assert_eq!(bright(f), expected, "{label} frame {i}");
            }
        }
    }

    #[test]
    fn thirds_for_five_by_three() {
        let cfg = SynthConfig {
            grid: GridSpec::FIVE_BY_THREE,
            ..Default::default()
        };
        let thirds: Vec<usize> = (0..15).step_by(3).map(|i| cfg.third_of(i)).collect();
        assert_eq!(thirds, vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig::default();
        let a = synth_salients(2, &cfg, &mut PinnedRng::new(9)).unwrap();
        let b = synth_salients(2, &cfg, &mut PinnedRng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a[0].1.image.dims(), (64, 72));
    }

    #[test]
    fn too_few_rows_rejected() {
        let cfg = SynthConfig {
            grid: GridSpec::new(2, 2).unwrap(),
            ..Default::default()
        };
        assert!(synth_video(ClassLabel::Violence, 1, &cfg, &mut PinnedRng::new(0)).is_err());
    }

    #[test]
    fn dataset_layout_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let n = write_synthetic_dataset(dir.path(), 2, 2, &SynthConfig::default(), 3).unwrap();
        assert_eq!(n, 6);
        let seq = crate::frame::read_frame_dir(&dir.path().join("Violence").join("v-0001")).unwrap();
        assert_eq!(seq.len(), 12);
        assert_eq!(seq.fps, Some(30.0));
    }
}
