//! Classifiers for the three detection pipelines and their training loops.
//!
//! All arithmetic is `f64` with hand-written backward passes; see
//! [`gradcheck`] for the finite-difference checks.

pub mod attention;
pub mod gradcheck;
pub mod image_model;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod video3d;

pub use attention::{attention_fuse, AttentionFusionParams, Fusion, FusionGrads, TemporalModel};
pub use image_model::{image_classifier_forward, BackboneSpec, ImageClassifier, DEFAULT_FEATURE_DIM};
pub use loss::{smoothed_bce_grad, smoothed_bce_loss, smoothed_target};
pub use optim::{LrSchedule, OptimizerKind};
pub use tensor::{ParamSet, Tensor};
pub use train::{
    sequence_features, train_image_model, train_temporal_stage2, train_video3d, EpochRecord, LabeledImage,
    LabeledSequence, TrainConfig, TrainLog,
};
pub use video3d::{build_clip, video3d_forward, ClipSpec, Video3dNet, Video3dSpec};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::video_ingest::sample_frame_indices;

/// Fake probability for a single face crop.
pub trait FaceScorer: Send + Sync {
    fn score_face(&self, face: &Image) -> Result<f64>;
}

/// Fake probability for a whole face sequence.
pub trait SequenceScorer: Send + Sync {
    fn score_sequence(&self, faces: &[Image]) -> Result<f64>;
}

impl FaceScorer for ImageClassifier {
    fn score_face(&self, face: &Image) -> Result<f64> {
        let s = self.spec().input_size;
        if face.dims() == (s, s) {
            self.predict(face)
        } else {
            self.predict(&face.resize_bilinear(s, s))
        }
    }
}

impl SequenceScorer for Video3dNet {
    fn score_sequence(&self, faces: &[Image]) -> Result<f64> {
        self.predict_faces(faces)
    }
}

/// Frozen frame classifier feeding the attention model.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalScorer {
    pub extractor: ImageClassifier,
    pub temporal: TemporalModel,
    /// Frames sampled from the sequence before fusion.
    pub frames: usize,
}

impl TemporalScorer {
    pub fn new(extractor: ImageClassifier, temporal: TemporalModel, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(invalid!("temporal scorer needs at least one frame"));
        }
        if extractor.feature_dim() != temporal.feature_dim() {
            return Err(invalid!(
                "extractor emits {} features, attention expects {}",
                extractor.feature_dim(),
                temporal.feature_dim()
            ));
        }
        Ok(Self {
            extractor,
            temporal,
            frames,
        })
    }
}

impl SequenceScorer for TemporalScorer {
    fn score_sequence(&self, faces: &[Image]) -> Result<f64> {
        let picked: Vec<&Image> = sample_frame_indices(faces.len(), self.frames)?
            .into_iter()
            .map(|i| &faces[i])
            .collect();
        let features = sequence_features(&self.extractor, &picked)?;
        self.temporal.predict_features(&features)
    }
}
