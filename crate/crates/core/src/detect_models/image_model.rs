//! Frame-level classifier: a small convolutional backbone producing a
//! `feature_dim` embedding and a logistic head on top of it.
//!
//! Layout: 4×4/4 conv stem → softplus → 3×3/2 conv → softplus → global average
//! pool → linear → tanh (the feature) → linear → sigmoid.
//!
//! Stem kernels are constrained to sum to zero per input channel, so the
//! first layer responds to local residuals rather than absolute intensity.

use serde::{Deserialize, Serialize};

use super::ops::{self, conv3d, conv3d_backward, global_avg_pool, linear, linear_backward, sigmoid};
use super::tensor::{ParamSet, Tensor};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::seed;

/// Input sizes used by the frame-level pipelines.
pub const STANDARD_INPUT_SIZES: [usize; 3] = [112, 224, 320];
pub const DEFAULT_FEATURE_DIM: usize = 64;

const STEM_KERNEL: usize = 4;
const CONV_KERNEL: usize = 3;
const CONV_STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub feature_dim: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub conv_channels: usize,
    /// Allows input sizes outside the standard set (desk-scale tests).
    #[serde(default)]
    pub reduced: bool,
}

impl BackboneSpec {
    pub fn toy(name: &str, input_size: usize, stem_channels: usize, conv_channels: usize) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            feature_dim: DEFAULT_FEATURE_DIM,
            input_size,
            stem_channels,
            conv_channels,
            reduced: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Three widths standing in for a B0/B1/B2 style ensemble.
    pub fn toy_ensemble(input_size: usize) -> Result<Vec<Self>> {
        [("toy-b0", 6, 12), ("toy-b1", 8, 16), ("toy-b2", 10, 20)]
            .into_iter()
            .map(|(n, s, c)| Self::toy(n, input_size, s, c))
            .collect()
    }

    /// Small backbone at a non-standard input size, flagged as reduced.
    pub fn reduced(input_size: usize, feature_dim: usize) -> Self {
        Self {
            name: "toy-reduced".into(),
            feature_dim,
            input_size,
            stem_channels: 4,
            conv_channels: 6,
            reduced: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.stem_channels == 0 || self.conv_channels == 0 {
            return Err(invalid!("backbone {} has an empty layer", self.name));
        }
        if !self.reduced && !STANDARD_INPUT_SIZES.contains(&self.input_size) {
            return Err(invalid!(
                "backbone input size {} not in {:?}",
                self.input_size,
                STANDARD_INPUT_SIZES
            ));
        }
        if self.input_size < STEM_KERNEL * CONV_KERNEL {
            return Err(invalid!("backbone input size {} too small", self.input_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassifier {
    spec: BackboneSpec,
    params: ParamSet,
}

pub(crate) struct ImageCache {
    x: Tensor,
    a1: Tensor,
    a2: Tensor,
    pooled: Vec<f64>,
    pub(crate) feature: Vec<f64>,
}

impl ImageClassifier {
    pub fn new(spec: BackboneSpec, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(init_seed);
        let (s, c, d) = (spec.stem_channels, spec.conv_channels, spec.feature_dim);
        let mut params = ParamSet::new();
        let stem_fan = 3 * STEM_KERNEL * STEM_KERNEL;
        params.insert(
            "backbone.stem.weight",
            ops::lecun_uniform(&[s, 3, 1, STEM_KERNEL, STEM_KERNEL], stem_fan, &mut rng),
        );
        params.insert("backbone.stem.bias", Tensor::zeros(&[s]));
        let conv_fan = s * CONV_KERNEL * CONV_KERNEL;
        params.insert(
            "backbone.conv.weight",
            ops::lecun_uniform(&[c, s, 1, CONV_KERNEL, CONV_KERNEL], conv_fan, &mut rng),
        );
        params.insert("backbone.conv.bias", Tensor::zeros(&[c]));
        params.insert("backbone.fc.weight", ops::lecun_uniform(&[d, c], c, &mut rng));
        params.insert("backbone.fc.bias", Tensor::zeros(&[d]));
        params.insert("head.weight", ops::lecun_uniform(&[1, d], d, &mut rng));
        params.insert("head.bias", Tensor::zeros(&[1]));
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: BackboneSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let reference = Self::new(spec.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.try_get(name) {
                Some(p) if p.shape == t.shape => {}
                Some(p) => return Err(invalid!("{name}: shape {:?}, expected {:?}", p.shape, t.shape)),
                None => return Err(invalid!("missing parameter {name}")),
            }
        }
        if params.num_values() != reference.params.num_values() {
            return Err(invalid!("unexpected extra parameters for {}", spec.name));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        let s = self.spec.input_size;
        if img.dims() != (s, s) {
            return Err(invalid!(
                "image is {}x{}, backbone {} expects {s}x{s}",
                img.height(),
                img.width(),
                self.spec.name
            ));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, img: &Image) -> Result<(f64, ImageCache)> {
        self.check_input(img)?;
        let p = &self.params;
        let x = Tensor::from_image(img).normalize_input();
        let mut a1 = conv3d(
            &x,
            &ops::zero_sum_taps(p.get("backbone.stem.weight")),
            p.get("backbone.stem.bias"),
            [1, STEM_KERNEL, STEM_KERNEL],
        )?;
        ops::softplus_inplace(&mut a1);
        let mut a2 = conv3d(
            &a1,
            p.get("backbone.conv.weight"),
            p.get("backbone.conv.bias"),
            [1, CONV_STRIDE, CONV_STRIDE],
        )?;
        ops::softplus_inplace(&mut a2);
        let pooled = global_avg_pool(&a2);
        let feature: Vec<f64> = linear(&pooled, p.get("backbone.fc.weight"), p.get("backbone.fc.bias"))
            .into_iter()
            .map(f64::tanh)
            .collect();
        let z = linear(&feature, p.get("head.weight"), p.get("head.bias"))[0];
        Ok((
            z,
            ImageCache {
                x,
                a1,
                a2,
                pooled,
                feature,
            },
        ))
    }

    /// Gradients of all parameters given d loss / d logit.
    pub(crate) fn backward(&self, cache: &ImageCache, dz: f64) -> ParamSet {
        let p = &self.params;
        let mut g = self.params.zeros_like();
        let (dfeat, dhw, dhb) = linear_backward(&cache.feature, p.get("head.weight"), &[dz]);
        *g.get_mut("head.weight") = dhw;
        *g.get_mut("head.bias") = dhb;
        self.backbone_backward(cache, &dfeat, &mut g);
        g
    }

    /// Backbone gradients for an upstream feature gradient, written into `g`.
    fn backbone_backward(&self, cache: &ImageCache, dfeature: &[f64], g: &mut ParamSet) {
        let p = &self.params;
        let mut dpre = dfeature.to_vec();
        ops::tanh_backward(&cache.feature, &mut dpre);
        let (dpooled, dfw, dfb) = linear_backward(&cache.pooled, p.get("backbone.fc.weight"), &dpre);
        *g.get_mut("backbone.fc.weight") = dfw;
        *g.get_mut("backbone.fc.bias") = dfb;

        let mut da2 = ops::global_avg_pool_backward(&cache.a2.shape, &dpooled);
        ops::softplus_backward(&cache.a2.data, &mut da2.data);
        let conv = conv3d_backward(
            &cache.a1,
            p.get("backbone.conv.weight"),
            &da2,
            [1, CONV_STRIDE, CONV_STRIDE],
            true,
        );
        *g.get_mut("backbone.conv.weight") = conv.dw;
        *g.get_mut("backbone.conv.bias") = conv.db;

        let mut da1 = conv.dx.expect("requested input gradient");
        ops::softplus_backward(&cache.a1.data, &mut da1.data);
        let stem = conv3d_backward(
            &cache.x,
            &ops::zero_sum_taps(p.get("backbone.stem.weight")),
            &da1,
            [1, STEM_KERNEL, STEM_KERNEL],
            false,
        );
        *g.get_mut("backbone.stem.weight") = ops::zero_sum_taps(&stem.dw);
        *g.get_mut("backbone.stem.bias") = stem.db;
    }

    pub fn logit(&self, img: &Image) -> Result<f64> {
        Ok(self.forward_cached(img)?.0)
    }

    /// Probability that the face is fake.
    pub fn predict(&self, img: &Image) -> Result<f64> {
        Ok(sigmoid(self.logit(img)?))
    }

    /// Backbone embedding of one face.
    pub fn features(&self, img: &Image) -> Result<Vec<f64>> {
        Ok(self.forward_cached(img)?.1.feature)
    }
}

/// One fake-probability per image.
pub fn image_classifier_forward(model: &ImageClassifier, batch: &[Image]) -> Result<Vec<f64>> {
    batch.iter().map(|img| model.predict(img)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn face(size: usize, phase: usize) -> Image {
        Image::from_fn(size, size, |y, x| {
            let v = ((x * 3 + y * 5 + phase) % 11) as f32 / 11.0;
            [v, 1.0 - v, 0.5]
        })
    }

    #[test]
    fn probabilities_in_range_and_pure() {
        let model = ImageClassifier::new(BackboneSpec::reduced(16, 8), 1).unwrap();
        let batch = vec![face(16, 0), face(16, 1), face(16, 0)];
        let p = image_classifier_forward(&model, &batch).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(p[0], p[2]);
    }

    #[test]
    fn wrong_size_rejected() {
        let model = ImageClassifier::new(BackboneSpec::reduced(16, 8), 1).unwrap();
        assert!(model.predict(&face(20, 0)).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(BackboneSpec::toy("x", 224, 4, 4).is_ok());
        assert!(BackboneSpec::toy("x", 100, 4, 4).is_err());
        assert_eq!(BackboneSpec::toy_ensemble(112).unwrap().len(), 3);
    }

    #[test]
    fn from_params_checks_shapes() {
        let spec = BackboneSpec::reduced(16, 8);
        let model = ImageClassifier::new(spec.clone(), 1).unwrap();
        assert!(ImageClassifier::from_params(spec.clone(), model.params().clone()).is_ok());
        let other = ImageClassifier::new(BackboneSpec::reduced(16, 4), 1).unwrap();
        assert!(ImageClassifier::from_params(spec, other.params().clone()).is_err());
    }
}
