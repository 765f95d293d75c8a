//! Central finite-difference checks of the hand-written backward passes.
//!
//! At each random point the analytic gradient `a` and the numerical
//! gradient `n` of the logit BCE are compared as whole vectors:
//! `|a - n| / max(|a|, |n|)` (Euclidean norms).

use rand::Rng;
use serde::Serialize;

use super::attention::TemporalModel;
use super::image_model::{BackboneSpec, ImageClassifier};
use super::loss::{bce_with_logit, smoothed_bce_grad, smoothed_bce_loss, smoothed_target};
use super::tensor::{ParamSet, Tensor};
use super::video3d::{ClipSpec, Video3dNet, Video3dSpec};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::seed::{self, SeededRng};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub points: usize,
    /// Number of scalar partial derivatives compared per point.
    pub coordinates: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn numeric_grad(params: &ParamSet, h: f64, mut loss: impl FnMut(&ParamSet) -> Result<f64>) -> Result<Vec<f64>> {
    let base = params.flatten();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut flat = base.clone();
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat(&flat);
        let up = loss(&probe)?;
        flat[i] = base[i] - h;
        probe.set_flat(&flat);
        let down = loss(&probe)?;
        flat[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Adds uniform noise in `[-scale, scale]` to every parameter, so biases
/// start away from zero.
fn jitter(params: &mut ParamSet, scale: f64, rng: &mut SeededRng) {
    for (_, t) in params.iter_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn random_target(rng: &mut SeededRng) -> Result<f64> {
    let label = rng.random_range(0..2u8);
    let eps = rng.random_range(0.0..0.2);
    smoothed_target(label, eps)
}

fn random_image(size: usize, rng: &mut SeededRng) -> Image {
    Image::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()])
}

fn check_points(points: usize, mut at: impl FnMut(usize) -> Result<(f64, usize)>) -> Result<GradCheckReport> {
    if points == 0 {
        return Err(invalid!("gradient check needs at least one point"));
    }
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    for i in 0..points {
        let (err, n) = at(i)?;
        worst = worst.max(err);
        coordinates = n;
    }
    Ok(GradCheckReport {
        points,
        coordinates,
        max_rel_error: worst,
    })
}

/// Attention module and head: gradients of all parameters and of the
/// `T × d` input features.
pub fn check_attention(points: usize, base_seed: u64) -> Result<GradCheckReport> {
    check_points(points, |i| {
        let mut rng = seed::child_rng(base_seed, &[i as u64]);
        let d = rng.random_range(3..9usize);
        let t = rng.random_range(1..7usize);
        let mut model = TemporalModel::new(d, None, rng.random())?;
        jitter(model.params_mut(), 0.3, &mut rng);
        let feats: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let target = random_target(&mut rng)?;

        let (z, cache) = model.forward_cached(&feats)?;
        let (_, dz) = bce_with_logit(z, target);
        let (gp, gf) = model.backward_with_inputs(&feats, &cache, dz);
        let mut analytic = gp.flatten();
        analytic.extend(gf.iter().flatten());

        let mut numeric = numeric_grad(model.params(), DEFAULT_STEP, |p| {
            let m = TemporalModel::from_params(p.clone())?;
            Ok(bce_with_logit(m.forward_cached(&feats)?.0, target).0)
        })?;
        for ti in 0..t {
            for k in 0..d {
                let mut probe = feats.clone();
                probe[ti][k] += DEFAULT_STEP;
                let up = bce_with_logit(model.forward_cached(&probe)?.0, target).0;
                probe[ti][k] -= 2.0 * DEFAULT_STEP;
                let down = bce_with_logit(model.forward_cached(&probe)?.0, target).0;
                numeric.push((up - down) / (2.0 * DEFAULT_STEP));
            }
        }
        Ok((relative_error(&analytic, &numeric), analytic.len()))
    })
}

/// Frame classifier at a reduced input size.
pub fn check_image_backbone(points: usize, base_seed: u64) -> Result<GradCheckReport> {
    let spec = BackboneSpec::reduced(16, 8);
    check_points(points, |i| {
        let mut rng = seed::child_rng(base_seed, &[i as u64]);
        let mut model = ImageClassifier::new(spec.clone(), rng.random())?;
        jitter(model.params_mut(), 0.1, &mut rng);
        let img = random_image(spec.input_size, &mut rng);
        let target = random_target(&mut rng)?;

        let (z, cache) = model.forward_cached(&img)?;
        let (_, dz) = bce_with_logit(z, target);
        let analytic = model.backward(&cache, dz).flatten();
        let numeric = numeric_grad(model.params(), DEFAULT_STEP, |p| {
            let m = ImageClassifier::from_params(spec.clone(), p.clone())?;
            Ok(bce_with_logit(m.logit(&img)?, target).0)
        })?;
        Ok((relative_error(&analytic, &numeric), analytic.len()))
    })
}

/// Clip network at a reduced clip shape.
pub fn check_video3d(points: usize, base_seed: u64) -> Result<GradCheckReport> {
    let spec = Video3dSpec::new(ClipSpec::reduced(6, 16, 16)?);
    check_points(points, |i| {
        let mut rng = seed::child_rng(base_seed, &[i as u64]);
        let mut net = Video3dNet::new(spec.clone(), rng.random())?;
        jitter(net.params_mut(), 0.1, &mut rng);
        let shape = spec.clip.shape();
        let n: usize = shape.iter().product();
        let clip = Tensor::from_vec(&shape, (0..n).map(|_| rng.random()).collect())?;
        let target = random_target(&mut rng)?;

        let (z, cache) = net.forward_cached(&clip)?;
        let (_, dz) = bce_with_logit(z, target);
        let analytic = net.backward(&cache, dz).flatten();
        let numeric = numeric_grad(net.params(), DEFAULT_STEP, |p| {
            let m = Video3dNet::from_params(spec.clone(), p.clone())?;
            Ok(bce_with_logit(m.forward_cached(&clip)?.0, target).0)
        })?;
        Ok((relative_error(&analytic, &numeric), analytic.len()))
    })
}

/// Smoothed BCE with respect to the probability.
pub fn check_smoothed_bce(points: usize, base_seed: u64) -> Result<GradCheckReport> {
    check_points(points, |i| {
        let mut rng = seed::child_rng(base_seed, &[i as u64]);
        let p: f64 = rng.random_range(0.02..0.98);
        let label = rng.random_range(0..2u8);
        let eps = rng.random_range(0.0..0.3);
        let analytic = smoothed_bce_grad(p, label, eps)?;
        let h = 1e-6;
        let numeric =
            (smoothed_bce_loss(p + h, label, eps)? - smoothed_bce_loss(p - h, label, eps)?) / (2.0 * h);
        Ok((relative_error(&[analytic], &[numeric]), 1))
    })
}
