//! Video-level scoring for the three pipeline variants.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::challenge_eval::PredictionRecord;
use crate::data_manifest::ManifestEntry;
use crate::detect_models::{FaceScorer, SequenceScorer};
use crate::error::{invalid, Error, Result};
use crate::face_extract::{extract_face_sequence, DetectorBackend, DEFAULT_CROP_FACTOR};
use crate::image::Image;
use crate::video_ingest::{sample_frame_indices, VideoDecoder, VideoRef};

/// Score given to videos in which no face was found.
pub const NEUTRAL_SCORE: f64 = 0.5;
pub const STANDARD_OUT_SIZES: [usize; 3] = [112, 224, 320];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub video_id: String,
    pub score: f64,
    pub runtime_ms: f64,
}

impl VideoPrediction {
    pub fn record(&self) -> PredictionRecord {
        PredictionRecord::new(self.video_id.clone(), self.score)
    }
}

pub fn aggregate_mean(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Middle order statistic; mean of the two middle values for even lengths.
pub fn aggregate_median(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Mean across models.
pub fn ensemble_average(per_model: &[f64]) -> Option<f64> {
    aggregate_mean(per_model)
}

/// Scores every face, then every horizontally flipped face, in frame order.
pub fn tta_flip_scores(model: &dyn FaceScorer, faces: &[Image]) -> Result<Vec<f64>> {
    if faces.is_empty() {
        return Err(invalid!("test-time augmentation needs at least one face"));
    }
    let mut out = Vec::with_capacity(2 * faces.len());
    for f in faces {
        out.push(model.score_face(f)?);
    }
    for f in faces {
        out.push(model.score_face(&f.flip_horizontal())?);
    }
    Ok(out)
}

pub fn clip_score(s: f64, lo: f64, hi: f64) -> f64 {
    s.max(lo).min(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Champion,
    DualBranch,
    Clip3d,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "champion" => Ok(Variant::Champion),
            "dual_branch" => Ok(Variant::DualBranch),
            "clip3d" => Ok(Variant::Clip3d),
            other => Err(invalid!("unknown variant {other:?} (champion, dual_branch or clip3d)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Champion => "champion",
            Variant::DualBranch => "dual_branch",
            Variant::Clip3d => "clip3d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub n_frames: usize,
    pub crop_factor: f64,
    pub out_size: usize,
    pub tta_flip: bool,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Accept face sizes outside 112/224/320.
    #[serde(default)]
    pub allow_reduced: bool,
}

impl PipelineConfig {
    /// 15 frames, 1.2x crops at 224, three-model face ensemble.
    pub fn champion() -> Self {
        Self {
            variant: Variant::Champion,
            n_frames: 15,
            crop_factor: DEFAULT_CROP_FACTOR,
            out_size: 224,
            tta_flip: false,
            clip_lo: 0.01,
            clip_hi: 0.99,
            allow_reduced: false,
        }
    }

    /// 10 frames at 320 with flip TTA on the image branch.
    pub fn dual_branch() -> Self {
        Self {
            variant: Variant::DualBranch,
            n_frames: 10,
            out_size: 320,
            tta_flip: true,
            ..Self::champion()
        }
    }

    /// 64-frame clips at 112.
    pub fn clip3d() -> Self {
        Self {
            variant: Variant::Clip3d,
            n_frames: 64,
            out_size: 112,
            ..Self::champion()
        }
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::Champion => Self::champion(),
            Variant::DualBranch => Self::dual_branch(),
            Variant::Clip3d => Self::clip3d(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(invalid!("n_frames must be at least 1"));
        }
        if !(self.crop_factor >= 1.0) || !self.crop_factor.is_finite() {
            return Err(invalid!("crop factor {} must be at least 1", self.crop_factor));
        }
        if self.out_size == 0 || (!self.allow_reduced && !STANDARD_OUT_SIZES.contains(&self.out_size)) {
            return Err(invalid!("face size {} not in {:?}", self.out_size, STANDARD_OUT_SIZES));
        }
        if !(0.0 <= self.clip_lo && self.clip_lo < self.clip_hi && self.clip_hi <= 1.0) {
            return Err(invalid!("clip range [{}, {}] invalid", self.clip_lo, self.clip_hi));
        }
        Ok(())
    }
}

/// Trained models for one variant.
pub enum PipelineModels {
    /// Per-face scores averaged across members, then across frames.
    Champion { members: Vec<Box<dyn FaceScorer>> },
    /// Median of image-branch scores averaged with a sequence-level score.
    DualBranch {
        image: Box<dyn FaceScorer>,
        video: Box<dyn SequenceScorer>,
    },
    Clip3d { net: Box<dyn SequenceScorer> },
}

impl PipelineModels {
    pub fn variant(&self) -> Variant {
        match self {
            PipelineModels::Champion { .. } => Variant::Champion,
            PipelineModels::DualBranch { .. } => Variant::DualBranch,
            PipelineModels::Clip3d { .. } => Variant::Clip3d,
        }
    }
}

/// Unclipped video score from a nonempty face sequence.
pub fn score_faces(cfg: &PipelineConfig, models: &PipelineModels, faces: &[Image]) -> Result<f64> {
    if faces.is_empty() {
        return Ok(NEUTRAL_SCORE);
    }
    match models {
        PipelineModels::Champion { members } => {
            if members.is_empty() {
                return Err(invalid!("champion ensemble has no members"));
            }
            let mut per_face = Vec::with_capacity(faces.len());
            for f in faces {
                let scores = members.iter().map(|m| m.score_face(f)).collect::<Result<Vec<_>>>()?;
                per_face.push(ensemble_average(&scores).expect("nonempty"));
            }
            Ok(aggregate_mean(&per_face).expect("nonempty"))
        }
        PipelineModels::DualBranch { image, video } => {
            let image_scores = if cfg.tta_flip {
                tta_flip_scores(image.as_ref(), faces)?
            } else {
                faces.iter().map(|f| image.score_face(f)).collect::<Result<_>>()?
            };
            let image_branch = aggregate_median(&image_scores).expect("nonempty");
            let video_branch = video.score_sequence(faces)?;
            Ok(ensemble_average(&[image_branch, video_branch]).expect("nonempty"))
        }
        PipelineModels::Clip3d { net } => net.score_sequence(faces),
    }
}

fn predict_inner(
    cfg: &PipelineConfig,
    video_id: &str,
    video: &VideoRef,
    decoder: &dyn VideoDecoder,
    models: &PipelineModels,
    detector: &dyn DetectorBackend,
) -> Result<f64> {
    cfg.validate()?;
    if models.variant() != cfg.variant {
        return Err(invalid!("config is {} but models are {}", cfg.variant, models.variant()));
    }
    let indices = sample_frame_indices(video.frame_count, cfg.n_frames)?;
    let batch = decoder.decode_frames(video, &indices)?;
    let seq = extract_face_sequence(video_id, &batch, detector, cfg.crop_factor, cfg.out_size)?;
    let faces: Vec<Image> = seq.crops.into_iter().map(|c| c.image).collect();
    let raw = score_faces(cfg, models, &faces)?;
    if !raw.is_finite() {
        return Err(invalid!("model produced a non-finite score"));
    }
    Ok(clip_score(raw, cfg.clip_lo, cfg.clip_hi))
}

/// Samples frames, extracts faces, scores them and clips the result.
pub fn predict_video(
    cfg: &PipelineConfig,
    video_id: &str,
    video: &VideoRef,
    decoder: &dyn VideoDecoder,
    models: &PipelineModels,
    detector: &dyn DetectorBackend,
) -> Result<VideoPrediction> {
    let start = Instant::now();
    let score = predict_inner(cfg, video_id, video, decoder, models, detector).map_err(|e| Error::Video {
        video_id: video_id.to_string(),
        source: Box::new(e),
    })?;
    Ok(VideoPrediction {
        video_id: video_id.to_string(),
        score,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Builds the face detector for a video directory.
pub type DetectorFactory = dyn Fn(&Path) -> Result<Box<dyn DetectorBackend>> + Sync;

/// Predicts every manifest entry on `workers` threads. Output follows
/// manifest order.
pub fn predict_manifest(
    cfg: &PipelineConfig,
    entries: &[ManifestEntry],
    decoder: &dyn VideoDecoder,
    models: &PipelineModels,
    detectors: &DetectorFactory,
    workers: usize,
) -> Result<Vec<VideoPrediction>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid!("thread pool: {e}"))?;
    pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let wrap = |err: Error| Error::Video {
                    video_id: e.video_id.clone(),
                    source: Box::new(err),
                };
                let video = decoder.probe(&e.path).map_err(wrap)?;
                let detector = detectors(&e.path).map_err(wrap)?;
                predict_video(cfg, &e.video_id, &video, decoder, models, detector.as_ref())
            })
            .collect()
    })
}

/// Sum of per-video runtimes in seconds.
pub fn total_runtime_s(preds: &[VideoPrediction]) -> f64 {
    preds.iter().map(|p| p.runtime_ms).sum::<f64>() / 1e3
}
