use std::fs;
use std::path::{Path, PathBuf};

use forgery_kit::checkpoint::Checkpoint;
use forgery_kit::config::RunConfig;
use forgery_kit::data_manifest::{filter_split, load_manifest, Label, ManifestEntry, Split};
use forgery_kit::detect_models::{FaceScorer, SequenceScorer};
use forgery_kit::face_extract::FixtureDetector;
use forgery_kit::fixtures::{generate_corpus, Artifact, SyntheticSpec};
use forgery_kit::scoring::{predict_manifest, predict_video, PipelineConfig, PipelineModels, Variant};
use forgery_kit::video_ingest::{FrameDirDecoder, MemoryDecoder, VideoDecoder};
use forgery_kit::workflow::{collect_faces, detector_for_dir, read_face_dir, train_pipeline, write_face_dir, TrainedPipeline};
use forgery_kit::{Error, Image};

struct Constant(f64);

impl FaceScorer for Constant {
    fn score_face(&self, _: &Image) -> forgery_kit::Result<f64> {
        Ok(self.0)
    }
}

impl SequenceScorer for Constant {
    fn score_sequence(&self, _: &[Image]) -> forgery_kit::Result<f64> {
        Ok(self.0)
    }
}

struct Brightness;

impl FaceScorer for Brightness {
    fn score_face(&self, face: &Image) -> forgery_kit::Result<f64> {
        let s = face.as_slice();
        Ok(s.iter().map(|&c| c as f64).sum::<f64>() / s.len() as f64)
    }
}

fn small_spec(n: usize, artifact: Artifact, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        frames_per_video: 6,
        image_size: 64,
        ..SyntheticSpec::new(n, artifact, seed)
    }
}

fn all_models(score: f64) -> Vec<PipelineModels> {
    vec![
        PipelineModels::Champion {
            members: vec![Box::new(Constant(score)), Box::new(Constant(score))],
        },
        PipelineModels::DualBranch {
            image: Box::new(Constant(score)),
            video: Box::new(Constant(score)),
        },
        PipelineModels::Clip3d {
            net: Box::new(Constant(score)),
        },
    ]
}

#[test]
fn faceless_videos_score_neutral_for_every_variant() {
    let mut decoder = MemoryDecoder::new();
    decoder.insert("blank", vec![Image::new(48, 48, [0.2, 0.3, 0.4]); 20]);
    let video = decoder.probe(Path::new("blank")).unwrap();
    let nobody = FixtureDetector::new();
    for models in all_models(0.97) {
        let mut cfg = PipelineConfig::preset(models.variant());
        cfg.out_size = 112;
        let p = predict_video(&cfg, "blank", &video, &decoder, &models, &nobody).unwrap();
        assert_eq!(p.score, 0.5, "{}", cfg.variant);
        assert!(p.runtime_ms >= 0.0);
    }
}

#[test]
fn scores_are_clipped_once_at_the_end() {
    let mut decoder = MemoryDecoder::new();
    decoder.insert("v", vec![Image::new(48, 48, [0.5; 3]); 4]);
    let video = decoder.probe(Path::new("v")).unwrap();
    let det = forgery_kit::face_extract::FullFrameDetector;
    for models in all_models(1.0) {
        let mut cfg = PipelineConfig::preset(models.variant());
        cfg.out_size = 112;
        let p = predict_video(&cfg, "v", &video, &decoder, &models, &det).unwrap();
        assert_eq!(p.score, 0.99);
    }
}

#[test]
fn manifest_order_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(10, Artifact::Checkerboard, 2), dir.path()).unwrap();
    let entries = load_manifest(&corpus.manifest_path).unwrap();
    let mut cfg = PipelineConfig::champion();
    cfg.out_size = 112;
    let models = PipelineModels::Champion {
        members: vec![Box::new(Brightness)],
    };
    let one = predict_manifest(&cfg, &entries, &FrameDirDecoder, &models, &detector_for_dir, 1).unwrap();
    let four = predict_manifest(&cfg, &entries, &FrameDirDecoder, &models, &detector_for_dir, 4).unwrap();
    let ids: Vec<&str> = one.iter().map(|p| p.video_id.as_str()).collect();
    let want: Vec<&str> = entries.iter().map(|e| e.video_id.as_str()).collect();
    assert_eq!(ids, want);
    for (a, b) in one.iter().zip(&four) {
        assert_eq!((&a.video_id, a.score), (&b.video_id, b.score));
    }
}

#[test]
fn decode_failures_name_the_video() {
    let cfg = PipelineConfig::champion();
    let models = PipelineModels::Champion {
        members: vec![Box::new(Constant(0.5))],
    };
    let entries = vec![ManifestEntry {
        video_id: "ghost".into(),
        path: PathBuf::from("/nonexistent/ghost"),
        label: Label::Real,
        split: Split::Test,
        source: "x".into(),
    }];
    let err = predict_manifest(&cfg, &entries, &FrameDirDecoder, &models, &detector_for_dir, 1).unwrap_err();
    assert!(matches!(err, Error::Video { ref video_id, .. } if video_id == "ghost"), "{err}");
    assert!(err.to_string().contains("ghost"));
}

#[test]
fn variant_mismatch_is_rejected() {
    let mut decoder = MemoryDecoder::new();
    decoder.insert("v", vec![Image::new(32, 32, [0.5; 3]); 3]);
    let video = decoder.probe(Path::new("v")).unwrap();
    let models = PipelineModels::Clip3d {
        net: Box::new(Constant(0.5)),
    };
    let det = forgery_kit::face_extract::FullFrameDetector;
    assert!(predict_video(&PipelineConfig::champion(), "v", &video, &decoder, &models, &det).is_err());
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_generation_is_bit_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = small_spec(4, Artifact::Checkerboard, 7);
    generate_corpus(&spec, a.path()).unwrap();
    generate_corpus(&spec, b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&small_spec(4, Artifact::Checkerboard, 8), c.path()).unwrap();
    assert_ne!(ta, tree_bytes(c.path()));
}

#[test]
fn generated_corpus_loads_and_boxes_fit() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(6, Artifact::BoundarySeam, 4), dir.path()).unwrap();
    let entries = load_manifest(&corpus.manifest_path).unwrap();
    assert_eq!(entries.len(), 6);
    assert_eq!(entries.iter().filter(|e| e.label == Label::Fake).count(), 3);
    for e in &entries {
        let det = FixtureDetector::load(&e.path.join("bboxes.txt")).unwrap();
        for (_, dets) in det.frames() {
            assert!(dets.iter().all(|d| d.bbox.is_within(64.0, 64.0)));
        }
    }
}

#[test]
fn face_directory_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(4, Artifact::Checkerboard, 3), dir.path().join("c")).unwrap();
    let entries = load_manifest(&corpus.manifest_path).unwrap();
    let videos = collect_faces(&entries, &FrameDirDecoder, 3, 1.2, 32).unwrap();
    assert!(videos.iter().all(|v| v.faces.len() == 3));
    let faces_dir = dir.path().join("faces");
    write_face_dir(&faces_dir, &videos).unwrap();
    let back = read_face_dir(&faces_dir).unwrap();
    assert_eq!(back.len(), 4);
    for v in &videos {
        let quantized: Vec<Image> = v.faces.iter().map(|f| Image::from_rgb8(&f.to_rgb8())).collect();
        assert_eq!(back[&v.entry.video_id], quantized);
    }
}

fn tiny_config(variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::preset(variant, 3);
    cfg.pipeline.out_size = 32;
    cfg.pipeline.allow_reduced = true;
    cfg.pipeline.n_frames = 6;
    cfg.augment.train_size = 32;
    cfg.feature_dim = 8;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    cfg.train.frames_per_video = 3;
    cfg
}

#[test]
fn trained_pipelines_survive_checkpointing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(8, Artifact::Checkerboard, 5), dir.path().join("c")).unwrap();
    let entries = load_manifest(&corpus.manifest_path).unwrap();
    let train = filter_split(&entries, Split::Train);
    for variant in [Variant::Champion, Variant::DualBranch, Variant::Clip3d] {
        let cfg = tiny_config(variant);
        let (trained, report) = train_pipeline(&cfg, &train, &FrameDirDecoder, None).unwrap();
        assert_eq!(report.n_videos, train.len());
        let ckpt = trained.to_checkpoint(&cfg.pipeline);
        let path = dir.path().join(format!("{variant}.ckpt"));
        ckpt.save(&path).unwrap();

        let (again, _) = train_pipeline(&cfg, &train, &FrameDirDecoder, None).unwrap();
        assert_eq!(again.to_checkpoint(&cfg.pipeline).sha256(), ckpt.sha256(), "{variant} not reproducible");

        let (restored, pipeline) = TrainedPipeline::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(pipeline, cfg.pipeline);
        let before = predict_manifest(&cfg.pipeline, &entries, &FrameDirDecoder, &trained.into_models(), &detector_for_dir, 2)
            .unwrap();
        let after = predict_manifest(&pipeline, &entries, &FrameDirDecoder, &restored.into_models(), &detector_for_dir, 2)
            .unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.score, b.score, "{variant} {}", a.video_id);
            assert!((0.01..=0.99).contains(&a.score));
        }
    }
}

#[test]
fn wrong_checkpoint_kind_is_rejected() {
    let ckpt = Checkpoint::new("something-else", serde_json::json!({}), Default::default());
    assert!(TrainedPipeline::from_checkpoint(&ckpt).is_err());
}
