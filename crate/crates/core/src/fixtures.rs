//! Synthetic video corpora for exercising the pipelines end to end.
//!
//! Videos come in pairs: video `2k` is real and `2k + 1` is fake, and both
//! are rendered from the same scene parameters. The fake one additionally
//! carries the chosen artifact inside the face region, so with
//! [`Artifact::None`] the two members of a pair are pixel-identical.
//! Pairs alternate between the train and test splits.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::challenge_eval::GroundTruthSet;
use crate::data_manifest::{write_manifest, Label, ManifestEntry, Split};
use crate::error::{invalid, Error, Result};
use crate::face_extract::{BBox, Detection, FixtureDetector, BBOX_FILE};
use crate::image::Image;
use crate::seed;
use crate::video_ingest::{write_frame_dir, Fps};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const SOURCE_NAME: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    /// Low-amplitude 2-pixel checkerboard over the face.
    Checkerboard,
    /// Dark ring near the face boundary and a slight tint inside it.
    BoundarySeam,
    None,
}

impl std::str::FromStr for Artifact {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Artifact::Checkerboard),
            "boundary_seam" => Ok(Artifact::BoundarySeam),
            "none" => Ok(Artifact::None),
            other => Err(invalid!("unknown artifact {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    pub fake_artifact: Artifact,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_videos: usize, fake_artifact: Artifact, seed: u64) -> Self {
        Self {
            n_videos,
            frames_per_video: 15,
            image_size: 128,
            fake_artifact,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_videos < 2 {
            return Err(invalid!("need at least 2 videos for both classes"));
        }
        if self.frames_per_video == 0 {
            return Err(invalid!("frames_per_video must be at least 1"));
        }
        if self.image_size < 32 {
            return Err(invalid!("image size {} below 32", self.image_size));
        }
        Ok(())
    }
}

pub const CHECKER_AMPLITUDE: f32 = 0.06;
const CHECKER_CELL: usize = 2;
const SEAM_DEPTH: f32 = 0.12;

/// Scene parameters shared by both members of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    size: usize,
    center: (f32, f32),
    axes: (f32, f32),
    skin: [f32; 3],
    background: [f32; 3],
    stripe: (f32, f32, f32),
    drift: f32,
    texture_seed: u64,
}

impl Scene {
    pub fn random(size: usize, scene_seed: u64) -> Self {
        let mut rng = seed::rng(scene_seed);
        let s = size as f32;
        let ax = s * rng.random_range(0.24..0.30);
        let ay = ax * rng.random_range(1.1..1.25);
        let margin_x = ax * 1.25 + 3.0;
        let margin_y = ay * 1.25 + 1.0;
        let cx = rng.random_range(margin_x..s - margin_x);
        let cy = rng.random_range(margin_y..s - margin_y);
        let skin = [
            rng.random_range(0.55..0.85),
            rng.random_range(0.40..0.65),
            rng.random_range(0.30..0.55),
        ];
        let background = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let angle = rng.random_range(0.0..PI);
        let period = rng.random_range(16.0..40.0);
        Self {
            size,
            center: (cx, cy),
            axes: (ax, ay),
            skin,
            background,
            stripe: (angle.cos(), angle.sin(), 2.0 * PI / period),
            drift: rng.random_range(0.0..2.0 * PI),
            texture_seed: rng.random(),
        }
    }

    fn face_center(&self, frame: usize) -> (f32, f32) {
        // Integer drift of up to two pixels keeps the checkerboard phase fixed.
        let dx = (2.0 * (self.drift + 0.4 * frame as f32).sin()).round();
        (self.center.0 + dx, self.center.1)
    }

    /// Tight box around the face ellipse in `frame`.
    pub fn bbox(&self, frame: usize) -> BBox {
        let (cx, cy) = self.face_center(frame);
        let (ax, ay) = self.axes;
        BBox::new((cx - ax) as f64, (cy - ay) as f64, 2.0 * ax as f64, 2.0 * ay as f64)
    }

    pub fn render(&self, frame: usize, artifact: Artifact) -> Image {
        let (cx, cy) = self.face_center(frame);
        let (ax, ay) = self.axes;
        let (ux, uy, k) = self.stripe;
        let mut tex = seed::rng(self.texture_seed);
        let grain: Vec<f32> = (0..self.size * self.size).map(|_| tex.random_range(-0.01..0.01)).collect();
        Image::from_fn(self.size, self.size, |y, x| {
            let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
            let stripe = 0.08 * ((xf * ux + yf * uy) * k).sin();
            let g = grain[y * self.size + x];
            let mut px = self.background.map(|c| c + stripe + g);
            let (nx, ny) = ((xf - cx) / ax, (yf - cy) / ay);
            let r = (nx * nx + ny * ny).sqrt();
            if r < 1.0 {
                let shade = 0.12 * (1.0 - r * r) - 0.05 * ny;
                px = self.skin.map(|c| c + shade);
                let eye = |ex: f32| ((nx - ex) / 0.16).powi(2) + ((ny + 0.25) / 0.09).powi(2) < 1.0;
                let mouth = (nx / 0.35).powi(2) + ((ny - 0.45) / 0.07).powi(2) < 1.0;
                if eye(-0.35) || eye(0.35) {
                    px = [0.12, 0.10, 0.10];
                } else if mouth {
                    px = [0.55, 0.20, 0.22];
                }
                match artifact {
                    Artifact::Checkerboard => {
                        let sign = if (x / CHECKER_CELL + y / CHECKER_CELL) % 2 == 0 { 1.0 } else { -1.0 };
                        px = px.map(|c| c + sign * CHECKER_AMPLITUDE);
                    }
                    Artifact::BoundarySeam => {
                        if (0.86..0.94).contains(&r) {
                            px = px.map(|c| c - SEAM_DEPTH);
                        } else if r < 0.86 {
                            px[0] += 0.04;
                            px[2] -= 0.04;
                        }
                    }
                    Artifact::None => {}
                }
            }
            px.map(|c| c.clamp(0.0, 1.0))
        })
    }
}

/// A real-looking frame for distortion tests.
pub fn fixture_image(size: usize, image_seed: u64) -> Image {
    Scene::random(size, image_seed).render(0, Artifact::None)
}

pub fn video_id(index: usize) -> String {
    format!("vid_{index:04}")
}

pub fn label_of(index: usize) -> Label {
    if index % 2 == 1 {
        Label::Fake
    } else {
        Label::Real
    }
}

pub fn split_of(index: usize) -> Split {
    if (index / 2) % 2 == 0 {
        Split::Train
    } else {
        Split::Test
    }
}

/// Frames and face boxes of one synthetic video, without touching disk.
pub fn render_video(spec: &SyntheticSpec, index: usize) -> (Vec<Image>, FixtureDetector) {
    let scene = Scene::random(spec.image_size, seed::derive(spec.seed, &[(index / 2) as u64]));
    let artifact = if label_of(index) == Label::Fake {
        spec.fake_artifact
    } else {
        Artifact::None
    };
    let mut detector = FixtureDetector::new();
    let frames = (0..spec.frames_per_video)
        .map(|f| {
            detector.insert(
                f,
                Detection {
                    bbox: scene.bbox(f),
                    confidence: 0.99,
                },
            );
            scene.render(f, artifact)
        })
        .collect();
    (frames, detector)
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub truth_path: PathBuf,
    /// Entries with paths relative to `root`.
    pub entries: Vec<ManifestEntry>,
}

/// Writes `videos/vid_XXXX/` frame directories (with `bboxes.txt`), a
/// manifest and a ground-truth file under `out_dir`.
pub fn generate_corpus(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<Corpus> {
    spec.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let videos = root.join("videos");
    fs::create_dir_all(&videos).map_err(|e| Error::io(&videos, e))?;
    let mut entries = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let id = video_id(i);
        let dir = videos.join(&id);
        let (frames, detector) = render_video(spec, i);
        write_frame_dir(&dir, &frames, Fps::default())?;
        detector.save(&dir.join(BBOX_FILE))?;
        entries.push(ManifestEntry {
            video_id: id.clone(),
            path: PathBuf::from("videos").join(&id),
            label: label_of(i),
            split: split_of(i),
            source: SOURCE_NAME.into(),
        });
    }
    let manifest_path = root.join(MANIFEST_FILE);
    write_manifest(&manifest_path, &entries)?;
    let truth_path = root.join(TRUTH_FILE);
    GroundTruthSet::new(entries.iter().map(|e| (e.video_id.clone(), e.label.as_u8())))?.save(&truth_path)?;
    Ok(Corpus {
        root,
        manifest_path,
        truth_path,
        entries,
    })
}
