//! Face-forgery detection toolkit: frame sampling, face cropping, training
//! distortions, three detection pipelines and a log-loss challenge harness.

pub mod challenge_eval;
pub mod checkpoint;
pub mod config;
pub mod data_manifest;
pub mod detect_models;
pub mod error;
pub mod face_extract;
pub mod fixtures;
pub mod image;
pub mod perturb;
pub mod scoring;
pub mod seed;
pub mod video_ingest;
pub mod workflow;

pub use challenge_eval::{bce_loss, rank_leaderboard, GroundTruthSet, LeaderboardEntry, PhaseConfig, PredictionRecord};
pub use config::RunConfig;
pub use data_manifest::{load_manifest, Label, ManifestEntry, Split};
pub use error::{Error, Result};
pub use image::Image;
pub use scoring::{predict_video, PipelineConfig, PipelineModels, Variant, VideoPrediction};
