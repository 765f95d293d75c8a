//! Video probing, equal-interval frame selection and frame decoding.
//!
//! Videos on disk are directories of numbered PNG frames
//! (`frame_000000.png`, `frame_000001.png`, ...) with an optional
//! `video.json` sidecar carrying the frame count and frame rate. Other
//! container formats plug in through [`VideoDecoder`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

pub const META_FILE: &str = "video.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Frame rate as a rational number of frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(invalid!("frame rate {num}/{den} is not positive"));
        }
        Ok(Self { num, den })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for Fps {
    fn default() -> Self {
        Self { num: 25, den: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub path: PathBuf,
    pub frame_count: usize,
    pub fps: Fps,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoMeta {
    frame_count: usize,
    #[serde(default)]
    fps: Fps,
}

impl VideoRef {
    /// Probes a frame directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_path = path.join(META_FILE);
        if meta_path.is_file() {
            let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: VideoMeta =
                serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.line(), e.to_string()))?;
            Fps::new(meta.fps.num, meta.fps.den)?;
            return Ok(Self {
                path: path.to_path_buf(),
                frame_count: meta.frame_count,
                fps: meta.fps,
            });
        }
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut frame_count = 0;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("frame_") && name.ends_with(".png") {
                frame_count += 1;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            frame_count,
            fps: Fps::default(),
        })
    }

    pub fn write_meta(&self) -> Result<()> {
        let meta = VideoMeta {
            frame_count: self.frame_count,
            fps: self.fps,
        };
        let meta_path = self.path.join(META_FILE);
        let text = serde_json::to_string(&meta).expect("meta serializes");
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Decoded frames together with the indices they were taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub frames: Vec<Image>,
    pub source_indices: Vec<usize>,
}

impl FrameBatch {
    pub fn new(frames: Vec<Image>, source_indices: Vec<usize>) -> Result<Self> {
        if frames.len() != source_indices.len() {
            return Err(invalid!(
                "{} frames but {} source indices",
                frames.len(),
                source_indices.len()
            ));
        }
        check_strictly_increasing(&source_indices)?;
        Ok(Self {
            frames,
            source_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Image)> {
        self.source_indices.iter().copied().zip(&self.frames)
    }
}

fn check_strictly_increasing(indices: &[usize]) -> Result<()> {
    if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
        return Err(invalid!("frame indices not strictly increasing: {} then {}", w[0], w[1]));
    }
    Ok(())
}

/// Picks `n` frame indices at equal intervals: `floor(i * total / n)` for
/// `i in 0..n`. Videos shorter than `n` frames yield every frame.
pub fn sample_frame_indices(total_frames: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(invalid!("cannot sample zero frames"));
    }
    if total_frames < n {
        return Ok((0..total_frames).collect());
    }
    // u128 keeps i * total exact for any usize inputs.
    Ok((0..n)
        .map(|i| ((i as u128 * total_frames as u128) / n as u128) as usize)
        .collect())
}

/// Frame source for a video reference.
pub trait VideoDecoder: Send + Sync {
    fn probe(&self, path: &Path) -> Result<VideoRef>;

    fn read_frame(&self, video: &VideoRef, index: usize) -> Result<Image>;

    fn decode_frames(&self, video: &VideoRef, indices: &[usize]) -> Result<FrameBatch> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= video.frame_count) {
            return Err(invalid!(
                "frame index {bad} out of range for {} ({} frames)",
                video.path.display(),
                video.frame_count
            ));
        }
        check_strictly_increasing(indices)?;
        let frames = indices
            .iter()
            .map(|&i| self.read_frame(video, i))
            .collect::<Result<Vec<_>>>()?;
        FrameBatch::new(frames, indices.to_vec())
    }
}

/// Reads frame directories written by [`write_frame_dir`].
#[derive(Debug, Default, Clone, Copy)]
pub struct FrameDirDecoder;

impl VideoDecoder for FrameDirDecoder {
    fn probe(&self, path: &Path) -> Result<VideoRef> {
        VideoRef::open(path)
    }

    fn read_frame(&self, video: &VideoRef, index: usize) -> Result<Image> {
        Image::load(&video.path.join(frame_file_name(index)))
    }
}

/// Decodes `indices` from a frame directory.
pub fn decode_frames(video: &VideoRef, indices: &[usize]) -> Result<FrameBatch> {
    FrameDirDecoder.decode_frames(video, indices)
}

/// Writes frames as a frame directory plus `video.json`.
pub fn write_frame_dir(dir: &Path, frames: &[Image], fps: Fps) -> Result<VideoRef> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        frame.save_png(&dir.join(frame_file_name(i)))?;
    }
    let video = VideoRef {
        path: dir.to_path_buf(),
        frame_count: frames.len(),
        fps,
    };
    video.write_meta()?;
    Ok(video)
}

/// In-memory videos keyed by path, for tests and embedding.
#[derive(Debug, Default, Clone)]
pub struct MemoryDecoder {
    videos: HashMap<PathBuf, Vec<Image>>,
}

impl MemoryDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<PathBuf>, frames: Vec<Image>) {
        self.videos.insert(path.into(), frames);
    }
}

impl VideoDecoder for MemoryDecoder {
    fn probe(&self, path: &Path) -> Result<VideoRef> {
        let frames = self.videos.get(path).ok_or_else(|| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such video"))
        })?;
        Ok(VideoRef {
            path: path.to_path_buf(),
            frame_count: frames.len(),
            fps: Fps::default(),
        })
    }

    fn read_frame(&self, video: &VideoRef, index: usize) -> Result<Image> {
        self.videos
            .get(&video.path)
            .and_then(|frames| frames.get(index))
            .cloned()
            .ok_or_else(|| invalid!("frame {index} missing from {}", video.path.display()))
    }
}
