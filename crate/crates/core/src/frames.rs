//! Frame-directory access and deterministic frame sampling.
//!
//! Videos are consumed as directories of pre-extracted frames. Frames are
//! ordered by file name, so zero-padded names (`000.png`, `001.png`, ...) are
//! expected. Container files are rejected; extract frames first, e.g.
//! `ffmpeg -i clip.mp4 frames/%04d.png`.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame source {0} does not exist")]
    Missing(PathBuf),
    #[error("frame source {0} is a file; extract frames into a directory first")]
    NotADirectory(PathBuf),
    #[error("no frame images in {0}")]
    Empty(PathBuf),
    #[error("{path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    SizeMismatch {
        index: usize,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "ppm"];

/// Sorted frame image paths inside `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, FrameError> {
    if !dir.exists() {
        return Err(FrameError::Missing(dir.to_path_buf()));
    }
    if !dir.is_dir() {
        return Err(FrameError::NotADirectory(dir.to_path_buf()));
    }
    let rd = std::fs::read_dir(dir).map_err(|e| FrameError::Unreadable {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(FrameError::Empty(dir.to_path_buf()));
    }
    Ok(paths)
}

pub fn read_frame(path: &Path) -> Result<RgbImage, FrameError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| FrameError::Unreadable {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Indices of `k` frames out of `n`: `round(i*(n-1)/(k-1))` for `k >= 2`,
/// every frame when `n <= k`, and the middle frame `(n-1)/2` for `k == 1`.
pub fn sample_indices(n: usize, k: usize) -> Result<Vec<usize>, FrameError> {
    if k == 0 {
        return Err(FrameError::ZeroSamples);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n <= k {
        return Ok((0..n).collect());
    }
    if k == 1 {
        return Ok(vec![(n - 1) / 2]);
    }
    // integer round-half-up of i*(n-1)/(k-1)
    let (num, den) = (n - 1, k - 1);
    Ok((0..k).map(|i| (2 * i * num + den) / (2 * den)).collect())
}

/// A video's frames, loaded in order.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub indices: Vec<usize>,
    pub frames: Vec<RgbImage>,
    pub total: usize,
}

/// Loads every frame of `dir`, checking they share one size.
pub fn load_all(dir: &Path) -> Result<Vec<RgbImage>, FrameError> {
    let paths = list_frames(dir)?;
    let frames = paths.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>, _>>()?;
    check_sizes(&frames)?;
    Ok(frames)
}

pub fn check_sizes(frames: &[RgbImage]) -> Result<(), FrameError> {
    if let Some(first) = frames.first() {
        let expected = first.dimensions();
        for (index, f) in frames.iter().enumerate() {
            if f.dimensions() != expected {
                return Err(FrameError::SizeMismatch {
                    index,
                    expected,
                    got: f.dimensions(),
                });
            }
        }
    }
    Ok(())
}

/// Loads only the `k` sampled frames of `dir`.
pub fn sample_frames(dir: &Path, k: usize) -> Result<FrameSet, FrameError> {
    let paths = list_frames(dir)?;
    let indices = sample_indices(paths.len(), k)?;
    let frames = indices
        .iter()
        .map(|&i| read_frame(&paths[i]))
        .collect::<Result<Vec<_>, _>>()?;
    check_sizes(&frames)?;
    Ok(FrameSet {
        indices,
        frames,
        total: paths.len(),
    })
}

/// Lossless PNG encoding.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}
