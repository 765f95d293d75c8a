//! Mini-batch training loops for the three model families.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::TemporalModel;
use super::image_model::{BackboneSpec, ImageClassifier};
use super::loss::{bce_with_logit, smoothed_target};
use super::optim::{Adam, LrSchedule, OptimizerKind};
use super::tensor::{ParamSet, Tensor};
use super::video3d::{build_clip, Video3dNet, Video3dSpec};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::perturb::{augment_for_training, AugmentPolicy};
use crate::seed;
use crate::video_ingest::sample_frame_indices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub label_smoothing: f64,
    pub frames_per_video: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// AdamW at 1e-3, batch 128, 50 epochs, label smoothing 0.05, 15 frames per video.
    pub fn champion() -> Self {
        Self {
            optimizer: OptimizerKind::AdamW,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 50,
            lr_schedule: LrSchedule::Constant,
            label_smoothing: 0.05,
            frames_per_video: 15,
            seed: 0,
        }
    }

    /// Adam at 2e-4 (betas 0.9/0.999, decay 1e-5), batch 32, 20 epochs with
    /// the rate halved every 5, sequences of 5 frames.
    pub fn dual_branch() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-5,
            batch_size: 32,
            epochs: 20,
            lr_schedule: LrSchedule::HalveEvery5,
            label_smoothing: 0.0,
            frames_per_video: 5,
            seed: 0,
        }
    }

    pub fn clip3d() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            batch_size: 8,
            epochs: 20,
            lr_schedule: LrSchedule::Constant,
            label_smoothing: 0.0,
            frames_per_video: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid!("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.frames_per_video == 0 {
            return Err(invalid!("batch size, epochs and frames per video must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(invalid!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub frames: Vec<Image>,
    pub label: u8,
}

pub(crate) trait Trainable: Sync {
    fn params_mut(&mut self) -> &mut ParamSet;
    fn params_ref(&self) -> &ParamSet;
}

impl Trainable for ImageClassifier {
    fn params_mut(&mut self) -> &mut ParamSet {
        ImageClassifier::params_mut(self)
    }
    fn params_ref(&self) -> &ParamSet {
        self.params()
    }
}

impl Trainable for TemporalModel {
    fn params_mut(&mut self) -> &mut ParamSet {
        TemporalModel::params_mut(self)
    }
    fn params_ref(&self) -> &ParamSet {
        self.params()
    }
}

impl Trainable for Video3dNet {
    fn params_mut(&mut self) -> &mut ParamSet {
        Video3dNet::params_mut(self)
    }
    fn params_ref(&self) -> &ParamSet {
        self.params()
    }
}

const SHUFFLE_STREAM: u64 = 0x7368_7566;

/// Runs `cfg.epochs` of shuffled mini-batch descent. `sample_grad(model,
/// index, epoch)` returns one sample's loss and parameter gradient.
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so results do not depend on thread scheduling.
fn fit<M, F>(cfg: &TrainConfig, model: &mut M, n: usize, sample_grad: F) -> Result<TrainLog>
where
    M: Trainable,
    F: Fn(&M, usize, usize) -> Result<(f64, ParamSet)> + Sync,
{
    let mut opt = Adam::new(cfg.optimizer, model.params_ref(), cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch);
        order.sort_unstable();
        order.shuffle(&mut seed::child_rng(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let shared: &M = model;
            let results: Vec<(f64, ParamSet)> = batch
                .par_iter()
                .map(|&i| sample_grad(shared, i, epoch))
                .collect::<Result<_>>()?;
            let mut total = model.params_ref().zeros_like();
            for (loss, g) in &results {
                loss_sum += loss;
                total.add_scaled(g, 1.0);
            }
            total.scale(1.0 / batch.len() as f64);
            opt.step(model.params_mut(), &total, lr);
        }
        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / n as f64,
        });
    }
    if !model.params_ref().is_finite() {
        return Err(invalid!("training diverged to non-finite parameters"));
    }
    Ok(log)
}

fn check_labels<'a>(labels: impl Iterator<Item = &'a u8>) -> Result<()> {
    for &l in labels {
        if l > 1 {
            return Err(invalid!("label must be 0 or 1, got {l}"));
        }
    }
    Ok(())
}

fn fit_image_model(
    model: &mut ImageClassifier,
    cfg: &TrainConfig,
    data: &[LabeledImage],
    policy: &AugmentPolicy,
) -> Result<TrainLog> {
    let eps = cfg.label_smoothing;
    fit(cfg, model, data.len(), |m, i, epoch| {
        let sample = &data[i];
        let image_seed = seed::derive(policy.seed, &[epoch as u64, i as u64]);
        let x = augment_for_training(&sample.image, policy, image_seed);
        let (z, cache) = m.forward_cached(&x)?;
        let (loss, dz) = bce_with_logit(z, smoothed_target(sample.label, eps)?);
        Ok((loss, m.backward(&cache, dz)))
    })
}

/// Trains a frame classifier on labeled face crops with smoothed BCE.
pub fn train_image_model(
    cfg: &TrainConfig,
    spec: BackboneSpec,
    data: &[LabeledImage],
    policy: &AugmentPolicy,
) -> Result<(ImageClassifier, TrainLog)> {
    cfg.validate()?;
    policy.validate()?;
    if data.is_empty() {
        return Err(invalid!("no training images"));
    }
    check_labels(data.iter().map(|d| &d.label))?;
    if policy.train_size != spec.input_size {
        return Err(invalid!(
            "augmentation size {} differs from backbone input {}",
            policy.train_size,
            spec.input_size
        ));
    }
    let mut model = ImageClassifier::new(spec, cfg.seed)?;
    let log = fit_image_model(&mut model, cfg, data, policy)?;
    Ok((model, log))
}

fn select_frames<'a>(frames: &'a [Image], n: usize) -> Result<Vec<&'a Image>> {
    Ok(sample_frame_indices(frames.len(), n)?.into_iter().map(|i| &frames[i]).collect())
}

/// Frame features from a (frozen) classifier, resizing faces to its input size.
pub fn sequence_features(extractor: &ImageClassifier, frames: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let s = extractor.spec().input_size;
    frames
        .iter()
        .map(|img| {
            if img.dims() == (s, s) {
                extractor.features(img)
            } else {
                extractor.features(&img.resize_bilinear(s, s))
            }
        })
        .collect()
}

/// Trains the attention module and its head on features from a frozen
/// frame classifier. `extractor` is only read.
pub fn train_temporal_stage2(
    extractor: &ImageClassifier,
    cfg: &TrainConfig,
    data: &[LabeledSequence],
) -> Result<(TemporalModel, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid!("no training sequences"));
    }
    check_labels(data.iter().map(|d| &d.label))?;
    if let Some(pos) = data.iter().position(|s| s.frames.is_empty()) {
        return Err(invalid!("training sequence {pos} has no frames"));
    }
    let features: Vec<Vec<Vec<f64>>> = data
        .par_iter()
        .map(|s| sequence_features(extractor, &select_frames(&s.frames, cfg.frames_per_video)?))
        .collect::<Result<_>>()?;
    let mut model = TemporalModel::new(extractor.feature_dim(), None, cfg.seed)?;
    let eps = cfg.label_smoothing;
    let log = fit(cfg, &mut model, data.len(), |m, i, _| {
        let (z, cache) = m.forward_cached(&features[i])?;
        let (loss, dz) = bce_with_logit(z, smoothed_target(data[i].label, eps)?);
        Ok((loss, m.backward(&features[i], &cache, dz)))
    })?;
    Ok((model, log))
}

fn augmented_clip(
    frames: &[Image],
    spec: &Video3dSpec,
    policy: &AugmentPolicy,
    clip_seed: u64,
) -> Result<Tensor> {
    // One seed per clip keeps flips, crops and occlusions consistent across frames.
    let frames: Vec<Image> = frames
        .iter()
        .map(|f| augment_for_training(f, policy, clip_seed))
        .collect();
    build_clip(&frames, &spec.clip)
}

fn is_identity(policy: &AugmentPolicy) -> bool {
    policy.mixup_probability == 0.0 && policy.extra_ops.is_empty()
}

/// Trains the clip network on labeled face sequences.
pub fn train_video3d(
    cfg: &TrainConfig,
    spec: Video3dSpec,
    data: &[LabeledSequence],
    policy: &AugmentPolicy,
) -> Result<(Video3dNet, TrainLog)> {
    cfg.validate()?;
    policy.validate()?;
    if data.is_empty() {
        return Err(invalid!("no training clips"));
    }
    check_labels(data.iter().map(|d| &d.label))?;
    let mut net = Video3dNet::new(spec.clone(), cfg.seed)?;
    let fixed: Option<Vec<Tensor>> = if is_identity(policy) {
        Some(
            data.par_iter()
                .map(|s| build_clip(&s.frames, &spec.clip))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let eps = cfg.label_smoothing;
    let log = fit(cfg, &mut net, data.len(), |m, i, epoch| {
        let clip = match &fixed {
            Some(clips) => clips[i].clone(),
            None => augmented_clip(
                &data[i].frames,
                &spec,
                policy,
                seed::derive(policy.seed, &[epoch as u64, i as u64]),
            )?,
        };
        let (z, cache) = m.forward_cached(&clip)?;
        let (loss, dz) = bce_with_logit(z, smoothed_target(data[i].label, eps)?);
        Ok((loss, m.backward(&cache, dz)))
    })?;
    Ok((net, log))
}
