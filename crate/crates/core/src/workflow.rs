//! Manifest-level glue: face collection, training per variant, and
//! checkpoint conversion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{BalanceMode, RunConfig};
use crate::data_manifest::{balance_downsample, balance_per_source, ManifestEntry};
use crate::detect_models::{
    train_image_model, train_temporal_stage2, train_video3d, BackboneSpec, ClipSpec, ImageClassifier,
    LabeledImage, LabeledSequence, TemporalModel, TemporalScorer, TrainConfig, TrainLog, Video3dNet, Video3dSpec,
};
use crate::error::{invalid, Error, Result};
use crate::face_extract::{extract_face_sequence, BBox, DetectorBackend, FixtureDetector, FullFrameDetector, BBOX_FILE};
use crate::image::Image;
use crate::perturb::AugmentPolicy;
use crate::scoring::{PipelineConfig, PipelineModels, Variant};
use crate::seed;
use crate::video_ingest::{sample_frame_indices, VideoDecoder};

pub const CHECKPOINT_KIND: &str = "forgery-kit-pipeline";
pub const FACE_INDEX_FILE: &str = "faces.jsonl";

/// Fixture boxes from `bboxes.txt` when the video directory has one,
/// otherwise the whole frame.
pub fn detector_for_dir(dir: &Path) -> Result<Box<dyn DetectorBackend>> {
    let path = dir.join(BBOX_FILE);
    if path.is_file() {
        Ok(Box::new(FixtureDetector::load(&path)?))
    } else {
        Ok(Box::new(FullFrameDetector))
    }
}

#[derive(Debug, Clone)]
pub struct VideoFaces {
    pub entry: ManifestEntry,
    pub faces: Vec<Image>,
    pub boxes: Vec<(usize, BBox)>,
}

/// Face crops for `n_frames` equally spaced frames of every entry, in
/// manifest order.
pub fn collect_faces(
    entries: &[ManifestEntry],
    decoder: &dyn VideoDecoder,
    n_frames: usize,
    crop_factor: f64,
    out_size: usize,
) -> Result<Vec<VideoFaces>> {
    entries
        .par_iter()
        .map(|e| {
            let run = || -> Result<VideoFaces> {
                let video = decoder.probe(&e.path)?;
                let indices = sample_frame_indices(video.frame_count, n_frames)?;
                let batch = decoder.decode_frames(&video, &indices)?;
                let detector = detector_for_dir(&e.path)?;
                let seq = extract_face_sequence(&e.video_id, &batch, detector.as_ref(), crop_factor, out_size)?;
                Ok(VideoFaces {
                    entry: e.clone(),
                    boxes: seq.crops.iter().map(|c| (c.frame_index, c.src_bbox)).collect(),
                    faces: seq.crops.into_iter().map(|c| c.image).collect(),
                })
            };
            run().map_err(|err| Error::Video {
                video_id: e.video_id.clone(),
                source: Box::new(err),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct FaceIndexLine {
    video_id: String,
    frame_index: usize,
    file: PathBuf,
    bbox: [f64; 4],
}

/// Writes crops as `<video_id>/face_<frame>.png` plus a `faces.jsonl` index.
pub fn write_face_dir(dir: &Path, videos: &[VideoFaces]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for v in videos {
        let sub = dir.join(&v.entry.video_id);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (img, (frame, b)) in v.faces.iter().zip(&v.boxes) {
            let file = PathBuf::from(&v.entry.video_id).join(format!("face_{frame:06}.png"));
            img.save_png(&dir.join(&file))?;
            let line = FaceIndexLine {
                video_id: v.entry.video_id.clone(),
                frame_index: *frame,
                file,
                bbox: [b.x, b.y, b.w, b.h],
            };
            index.push_str(&serde_json::to_string(&line).expect("index line serializes"));
            index.push('\n');
        }
    }
    let path = dir.join(FACE_INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a directory written by [`write_face_dir`]; faces per video in frame order.
pub fn read_face_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Image>>> {
    let path = dir.join(FACE_INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out: BTreeMap<String, Vec<(usize, Image)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FaceIndexLine = serde_json::from_str(line).map_err(|e| Error::parse(&path, i + 1, e.to_string()))?;
        let img = Image::load(&dir.join(&rec.file))?;
        out.entry(rec.video_id).or_default().push((rec.frame_index, img));
    }
    Ok(out
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(f, _)| *f);
            (k, v.into_iter().map(|(_, img)| img).collect())
        })
        .collect())
}

pub fn balance(entries: &[ManifestEntry], mode: BalanceMode, run_seed: u64) -> Result<Vec<ManifestEntry>> {
    let s = seed::derive(run_seed, &[3]);
    match mode {
        BalanceMode::Pooled => balance_downsample(entries, s),
        BalanceMode::PerSource => balance_per_source(entries, s),
        BalanceMode::Off => Ok(entries.to_vec()),
    }
}

/// Trained weights for one variant.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedPipeline {
    Champion { members: Vec<ImageClassifier> },
    DualBranch { image: ImageClassifier, temporal: TemporalScorer },
    Clip3d { net: Video3dNet },
}

impl TrainedPipeline {
    pub fn variant(&self) -> Variant {
        match self {
            TrainedPipeline::Champion { .. } => Variant::Champion,
            TrainedPipeline::DualBranch { .. } => Variant::DualBranch,
            TrainedPipeline::Clip3d { .. } => Variant::Clip3d,
        }
    }

    pub fn into_models(self) -> PipelineModels {
        match self {
            TrainedPipeline::Champion { members } => PipelineModels::Champion {
                members: members
                    .into_iter()
                    .map(|m| Box::new(m) as Box<dyn crate::detect_models::FaceScorer>)
                    .collect(),
            },
            TrainedPipeline::DualBranch { image, temporal } => PipelineModels::DualBranch {
                image: Box::new(image),
                video: Box::new(temporal),
            },
            TrainedPipeline::Clip3d { net } => PipelineModels::Clip3d { net: Box::new(net) },
        }
    }

    pub fn to_checkpoint(&self, pipeline: &PipelineConfig) -> Checkpoint {
        let mut params = crate::detect_models::ParamSet::new();
        let meta = match self {
            TrainedPipeline::Champion { members } => {
                for (i, m) in members.iter().enumerate() {
                    params.extend(m.params().with_prefix(&format!("member{i}.")));
                }
                json!({
                    "variant": self.variant(),
                    "pipeline": pipeline,
                    "backbones": members.iter().map(|m| m.spec()).collect::<Vec<_>>(),
                })
            }
            TrainedPipeline::DualBranch { image, temporal } => {
                params.extend(image.params().with_prefix("image."));
                params.extend(temporal.extractor.params().with_prefix("extractor."));
                params.extend(temporal.temporal.params().with_prefix("temporal."));
                json!({
                    "variant": self.variant(),
                    "pipeline": pipeline,
                    "backbones": [image.spec(), temporal.extractor.spec()],
                    "sequence_frames": temporal.frames,
                })
            }
            TrainedPipeline::Clip3d { net } => {
                params.extend(net.params().with_prefix("net."));
                json!({
                    "variant": self.variant(),
                    "pipeline": pipeline,
                    "clip": net.spec(),
                })
            }
        };
        Checkpoint::new(CHECKPOINT_KIND, meta, params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, PipelineConfig)> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let variant: Variant = ckpt.meta_field("variant")?;
        let pipeline: PipelineConfig = ckpt.meta_field("pipeline")?;
        let p = &ckpt.params;
        let trained = match variant {
            Variant::Champion => {
                let specs: Vec<BackboneSpec> = ckpt.meta_field("backbones")?;
                let members = specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| ImageClassifier::from_params(s, p.strip_prefix(&format!("member{i}."))))
                    .collect::<Result<Vec<_>>>()?;
                TrainedPipeline::Champion { members }
            }
            Variant::DualBranch => {
                let specs: Vec<BackboneSpec> = ckpt.meta_field("backbones")?;
                let [image_spec, extractor_spec]: [BackboneSpec; 2] = specs
                    .try_into()
                    .map_err(|_| Error::Checkpoint("dual-branch checkpoint needs two backbones".into()))?;
                let frames: usize = ckpt.meta_field("sequence_frames")?;
                let image = ImageClassifier::from_params(image_spec, p.strip_prefix("image."))?;
                let extractor = ImageClassifier::from_params(extractor_spec, p.strip_prefix("extractor."))?;
                let temporal = TemporalModel::from_params(p.strip_prefix("temporal."))?;
                TrainedPipeline::DualBranch {
                    image,
                    temporal: TemporalScorer::new(extractor, temporal, frames)?,
                }
            }
            Variant::Clip3d => {
                let spec: Video3dSpec = ckpt.meta_field("clip")?;
                TrainedPipeline::Clip3d {
                    net: Video3dNet::from_params(spec, p.strip_prefix("net."))?,
                }
            }
        };
        if pipeline.variant != variant {
            return Err(Error::Checkpoint("pipeline variant disagrees with checkpoint".into()));
        }
        Ok((trained, pipeline))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub n_videos: usize,
    pub n_faces: usize,
    pub logs: Vec<(String, TrainLog)>,
}

fn backbone(name: &str, cfg: &RunConfig, stem: usize, conv: usize) -> Result<BackboneSpec> {
    let spec = BackboneSpec {
        name: name.to_string(),
        feature_dim: cfg.feature_dim,
        input_size: cfg.pipeline.out_size,
        stem_channels: stem,
        conv_channels: conv,
        reduced: cfg.pipeline.allow_reduced,
    };
    spec.validate()?;
    Ok(spec)
}

fn member_config(cfg: &TrainConfig, policy: &AugmentPolicy, member: u64) -> (TrainConfig, AugmentPolicy) {
    let mut c = cfg.clone();
    c.seed = seed::derive(cfg.seed, &[member]);
    let mut p = policy.clone();
    p.seed = seed::derive(policy.seed, &[member]);
    (c, p)
}

fn labeled_images(videos: &[VideoFaces]) -> Vec<LabeledImage> {
    videos
        .iter()
        .flat_map(|v| {
            v.faces.iter().map(|f| LabeledImage {
                image: f.clone(),
                label: v.entry.label.as_u8(),
            })
        })
        .collect()
}

fn labeled_sequences(videos: &[VideoFaces]) -> Vec<LabeledSequence> {
    videos
        .iter()
        .filter(|v| !v.faces.is_empty())
        .map(|v| LabeledSequence {
            frames: v.faces.clone(),
            label: v.entry.label.as_u8(),
        })
        .collect()
}

/// Balances the entries, extracts faces and trains the configured variant.
/// `cached` supplies precomputed crops by video id.
pub fn train_pipeline(
    cfg: &RunConfig,
    entries: &[ManifestEntry],
    decoder: &dyn VideoDecoder,
    cached: Option<&BTreeMap<String, Vec<Image>>>,
) -> Result<(TrainedPipeline, TrainReport)> {
    cfg.validate()?;
    if entries.is_empty() {
        return Err(invalid!("no training videos"));
    }
    let entries = balance(entries, cfg.balance, cfg.seed)?;
    let pc = &cfg.pipeline;
    let n_frames = match pc.variant {
        Variant::Champion => cfg.train.frames_per_video,
        Variant::DualBranch | Variant::Clip3d => pc.n_frames,
    };
    let videos: Vec<VideoFaces> = match cached {
        Some(map) => entries
            .iter()
            .map(|e| {
                let faces = map
                    .get(&e.video_id)
                    .ok_or_else(|| invalid!("no cached faces for {}", e.video_id))?;
                let faces = faces
                    .iter()
                    .map(|f| f.resize_bilinear(pc.out_size, pc.out_size))
                    .collect();
                Ok(VideoFaces {
                    entry: e.clone(),
                    faces,
                    boxes: Vec::new(),
                })
            })
            .collect::<Result<_>>()?,
        None => collect_faces(&entries, decoder, n_frames, pc.crop_factor, pc.out_size)?,
    };
    let mut report = TrainReport {
        n_videos: videos.len(),
        n_faces: videos.iter().map(|v| v.faces.len()).sum(),
        logs: Vec::new(),
    };
    let trained = match pc.variant {
        Variant::Champion => {
            let data = labeled_images(&videos);
            let widths = [("toy-b0", 6, 12), ("toy-b1", 8, 16), ("toy-b2", 10, 20)];
            let mut members = Vec::new();
            for (i, (name, stem, conv)) in widths.into_iter().enumerate() {
                let (tc, policy) = member_config(&cfg.train, &cfg.augment, i as u64);
                let (model, log) = train_image_model(&tc, backbone(name, cfg, stem, conv)?, &data, &policy)?;
                report.logs.push((name.to_string(), log));
                members.push(model);
            }
            TrainedPipeline::Champion { members }
        }
        Variant::DualBranch => {
            let data = labeled_images(&videos);
            let (tc, policy) = member_config(&cfg.train, &cfg.augment, 0);
            let (image, log) = train_image_model(&tc, backbone("toy-b5", cfg, 8, 16)?, &data, &policy)?;
            report.logs.push(("stage1".into(), log));
            let (tc2, _) = member_config(&cfg.train, &cfg.augment, 1);
            let (temporal, log) = train_temporal_stage2(&image, &tc2, &labeled_sequences(&videos))?;
            report.logs.push(("stage2".into(), log));
            let scorer = TemporalScorer::new(image.clone(), temporal, cfg.train.frames_per_video)?;
            TrainedPipeline::DualBranch { image, temporal: scorer }
        }
        Variant::Clip3d => {
            let reduced = pc.allow_reduced;
            let clip = if reduced {
                ClipSpec::reduced(pc.n_frames, pc.out_size, pc.out_size)?
            } else {
                ClipSpec::new(pc.n_frames, pc.out_size, pc.out_size)?
            };
            let (net, log) = train_video3d(&cfg.train, Video3dSpec::new(clip), &labeled_sequences(&videos), &cfg.augment)?;
            report.logs.push(("clip3d".into(), log));
            TrainedPipeline::Clip3d { net }
        }
    };
    Ok((trained, report))
}
