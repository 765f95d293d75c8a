//! Image-level distortions and training-time augmentation policies.
//!
//! Six distortion kinds at five intensity levels each. Level tables:
//!
//! | kind | parameter                        | L1    | L2    | L3   | L4   | L5   |
//! |------|----------------------------------|-------|-------|------|------|------|
//! | CS   | saturation scale                 | 0.9   | 0.8   | 0.6  | 0.4  | 0.2  |
//! | CC   | contrast scale                   | 0.9   | 0.8   | 0.6  | 0.4  | 0.2  |
//! | BW   | occluded 16×16 blocks            | 1     | 2     | 4    | 8    | 16   |
//! | GNC  | noise variance (unit range)      | 0.002 | 0.005 | 0.01 | 0.02 | 0.05 |
//! | GB   | blur sigma (px)                  | 0.5   | 1     | 2    | 3    | 5    |
//! | JPEG | encoder quality                  | 90    | 70    | 50   | 30   | 10   |
//!
//! Mixed distortions are always applied in the order CS, CC, BW, GNC, GB, JPEG.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::seed::{self, SeededRng};

pub const SATURATION_SCALE: [f32; 5] = [0.9, 0.8, 0.6, 0.4, 0.2];
pub const CONTRAST_SCALE: [f32; 5] = [0.9, 0.8, 0.6, 0.4, 0.2];
pub const BLOCK_COUNT: [usize; 5] = [1, 2, 4, 8, 16];
pub const BLOCK_SIZE: usize = 16;
pub const NOISE_VARIANCE: [f64; 5] = [0.002, 0.005, 0.01, 0.02, 0.05];
pub const BLUR_SIGMA: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];
pub const JPEG_QUALITY: [u8; 5] = [90, 70, 50, 30, 10];

/// Default probability that the distortion mixup fires for an image.
pub const DEFAULT_MIXUP_PROBABILITY: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistortionKind {
    /// Color saturation change.
    #[serde(rename = "CS")]
    Saturation,
    /// Color contrast change.
    #[serde(rename = "CC")]
    Contrast,
    /// Local block-wise occlusion.
    #[serde(rename = "BW")]
    BlockWise,
    /// White Gaussian noise in color components.
    #[serde(rename = "GNC")]
    GaussianNoise,
    /// Gaussian blur.
    #[serde(rename = "GB")]
    GaussianBlur,
    /// JPEG compression.
    #[serde(rename = "JPEG")]
    Jpeg,
}

impl DistortionKind {
    /// Canonical application order.
    pub const ALL: [DistortionKind; 6] = [
        DistortionKind::Saturation,
        DistortionKind::Contrast,
        DistortionKind::BlockWise,
        DistortionKind::GaussianNoise,
        DistortionKind::GaussianBlur,
        DistortionKind::Jpeg,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DistortionKind::Saturation => "CS",
            DistortionKind::Contrast => "CC",
            DistortionKind::BlockWise => "BW",
            DistortionKind::GaussianNoise => "GNC",
            DistortionKind::GaussianBlur => "GB",
            DistortionKind::Jpeg => "JPEG",
        }
    }

    fn ordinal(self) -> u64 {
        DistortionKind::ALL.iter().position(|&k| k == self).unwrap() as u64
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid!("unknown distortion kind {s:?}"))
    }
}

/// Intensity level, 1 (mildest) through 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Level(u8);

impl Level {
    pub fn new(level: u8) -> Result<Self> {
        if (1..=5).contains(&level) {
            Ok(Level(level))
        } else {
            Err(invalid!("distortion level {level} outside 1..=5"))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    fn idx(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Level::new(v)
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: Level,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: u8) -> Result<Self> {
        Ok(Self {
            kind,
            level: Level::new(level)?,
        })
    }

    /// Parses e.g. `("GNC", 3)`.
    pub fn parse(kind: &str, level: u8) -> Result<Self> {
        Self::new(kind.parse()?, level)
    }
}

fn luma(px: [f32; 3]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Pulls each pixel toward its gray value; `scale = 1` is the identity.
pub fn adjust_saturation(img: &Image, scale: f32) -> Image {
    let mut out = img.clone();
    for px in out.as_mut_slice().chunks_exact_mut(3) {
        let l = luma([px[0], px[1], px[2]]);
        for c in px.iter_mut() {
            *c = (l + scale * (*c - l)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Scales deviations from the mean image luminance.
pub fn adjust_contrast(img: &Image, scale: f32) -> Image {
    let n = (img.height() * img.width()).max(1) as f64;
    let mean = img
        .as_slice()
        .chunks_exact(3)
        .map(|px| luma([px[0], px[1], px[2]]) as f64)
        .sum::<f64>()
        / n;
    let mean = mean as f32;
    let mut out = img.clone();
    for c in out.as_mut_slice() {
        *c = (mean + scale * (*c - mean)).clamp(0.0, 1.0);
    }
    out
}

/// Paints `count` randomly placed `size × size` blocks, each a random gray.
pub fn occlude_blocks(img: &Image, count: usize, size: usize, rng: &mut SeededRng) -> Image {
    let mut out = img.clone();
    let (h, w) = img.dims();
    if h == 0 || w == 0 {
        return out;
    }
    let bh = size.min(h);
    let bw = size.min(w);
    for _ in 0..count {
        let y0 = rng.random_range(0..=h - bh);
        let x0 = rng.random_range(0..=w - bw);
        let gray: f32 = rng.random();
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                out.set_pixel(y, x, [gray; 3]);
            }
        }
    }
    out
}

/// Adds i.i.d. zero-mean Gaussian noise of the given variance to every channel.
pub fn add_gaussian_noise(img: &Image, variance: f64, rng: &mut SeededRng) -> Image {
    let mut out = img.clone();
    if variance <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive std");
    for c in out.as_mut_slice() {
        *c = (*c as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 || img.height() == 0 || img.width() == 0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w) = img.dims();
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let horizontal = Image::from_fn(h, w, |y, x| {
        let mut acc = [0.0f32; 3];
        for (k, &kv) in kernel.iter().enumerate() {
            let px = img.pixel(y, clampi(x as isize + k as isize - r, w));
            for c in 0..3 {
                acc[c] += kv * px[c];
            }
        }
        acc
    });
    let mut out = Image::from_fn(h, w, |y, x| {
        let mut acc = [0.0f32; 3];
        for (k, &kv) in kernel.iter().enumerate() {
            let px = horizontal.pixel(clampi(y as isize + k as isize - r, h), x);
            for c in 0..3 {
                acc[c] += kv * px[c];
            }
        }
        acc
    });
    out.clamp_unit();
    out
}

/// Encodes to JPEG at `quality` and decodes back.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    if img.height() == 0 || img.width() == 0 {
        return Err(invalid!("cannot JPEG-encode an empty image"));
    }
    let mut buf = Vec::new();
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100));
    img.to_rgb8().write_with_encoder(encoder)?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?;
    Ok(Image::from_rgb8(&decoded.to_rgb8()))
}

fn apply_with_rng(img: &Image, spec: DistortionSpec, rng: &mut SeededRng) -> Result<Image> {
    let i = spec.level.idx();
    Ok(match spec.kind {
        DistortionKind::Saturation => adjust_saturation(img, SATURATION_SCALE[i]),
        DistortionKind::Contrast => adjust_contrast(img, CONTRAST_SCALE[i]),
        DistortionKind::BlockWise => occlude_blocks(img, BLOCK_COUNT[i], BLOCK_SIZE, rng),
        DistortionKind::GaussianNoise => add_gaussian_noise(img, NOISE_VARIANCE[i], rng),
        DistortionKind::GaussianBlur => gaussian_blur(img, BLUR_SIGMA[i]),
        DistortionKind::Jpeg => jpeg_roundtrip(img, JPEG_QUALITY[i])?,
    })
}

/// Applies one distortion; deterministic in `(img, spec, seed)`.
pub fn apply_distortion(img: &Image, spec: DistortionSpec, seed: u64) -> Result<Image> {
    apply_with_rng(img, spec, &mut seed::rng(seed))
}

/// A training-time augmentation op with its own magnitude parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ExtraOp {
    RandomFlip,
    /// Square crop whose side is a uniform fraction in `[min_scale, 1]` of
    /// the shorter image side.
    RandomCrop { min_scale: f64 },
    /// Brightness shift in `±brightness`, contrast scale in `1 ± contrast`.
    BrightnessContrast { brightness: f64, contrast: f64 },
    /// Gaussian noise inside one random `size × size` patch.
    PatchGaussian { size: usize, sigma: f64 },
    ImageCompression { min_quality: u8, max_quality: u8 },
    GaussianBlur { max_sigma: f64 },
    GaussianNoise { max_variance: f64 },
    /// `ops_per_image` photometric ops drawn from a fixed menu, each at `magnitude` in `[0, 1]`.
    RandAugment { ops_per_image: usize, magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentOp {
    #[serde(flatten)]
    pub op: ExtraOp,
    pub probability: f64,
}

impl AugmentOp {
    pub fn new(op: ExtraOp, probability: f64) -> Self {
        Self { op, probability }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub mixup_probability: f64,
    #[serde(default)]
    pub extra_ops: Vec<AugmentOp>,
    /// Side length of the square training input.
    pub train_size: usize,
    pub seed: u64,
}

impl AugmentPolicy {
    /// Distortion mixup only, at the default trigger probability.
    pub fn distortion_mixup(train_size: usize, seed: u64) -> Self {
        Self {
            mixup_probability: DEFAULT_MIXUP_PROBABILITY,
            extra_ops: Vec::new(),
            train_size,
            seed,
        }
    }

    /// Mixup plus RandAugment, patch Gaussian, blur, compression, flip, crop
    /// and brightness/contrast.
    pub fn dual_branch(train_size: usize, seed: u64) -> Self {
        Self {
            mixup_probability: DEFAULT_MIXUP_PROBABILITY,
            extra_ops: vec![
                AugmentOp::new(ExtraOp::RandAugment { ops_per_image: 2, magnitude: 0.3 }, 0.5),
                AugmentOp::new(ExtraOp::PatchGaussian { size: train_size / 4, sigma: 0.1 }, 0.2),
                AugmentOp::new(ExtraOp::GaussianBlur { max_sigma: 1.5 }, 0.1),
                AugmentOp::new(ExtraOp::ImageCompression { min_quality: 40, max_quality: 95 }, 0.3),
                AugmentOp::new(ExtraOp::RandomFlip, 0.5),
                AugmentOp::new(ExtraOp::RandomCrop { min_scale: 0.85 }, 0.3),
                AugmentOp::new(ExtraOp::BrightnessContrast { brightness: 0.1, contrast: 0.2 }, 0.3),
            ],
            train_size,
            seed,
        }
    }

    /// Blur, color noise, crop and flip for clip models.
    pub fn clip(train_size: usize, seed: u64) -> Self {
        Self {
            mixup_probability: 0.0,
            extra_ops: vec![
                AugmentOp::new(ExtraOp::GaussianBlur { max_sigma: 1.5 }, 0.1),
                AugmentOp::new(ExtraOp::GaussianNoise { max_variance: 0.005 }, 0.1),
                AugmentOp::new(ExtraOp::RandomCrop { min_scale: 0.85 }, 0.3),
                AugmentOp::new(ExtraOp::RandomFlip, 0.5),
            ],
            train_size,
            seed,
        }
    }

    pub fn identity(train_size: usize) -> Self {
        Self {
            mixup_probability: 0.0,
            extra_ops: Vec::new(),
            train_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixup_probability) {
            return Err(invalid!("mixup probability {} outside [0, 1]", self.mixup_probability));
        }
        if self.train_size == 0 {
            return Err(invalid!("training size must be positive"));
        }
        for op in &self.extra_ops {
            if !(0.0..=1.0).contains(&op.probability) {
                return Err(invalid!("op probability {} outside [0, 1]", op.probability));
            }
        }
        Ok(())
    }
}

const MIXUP_STREAM: u64 = 0x6d69_7875;
const EXTRA_STREAM: u64 = 0x6578_7472;

/// With probability `mixup_probability`, applies a uniformly drawn nonempty
/// subset of the six distortion kinds at uniform levels, in canonical order.
pub fn mixup_distortions(img: &Image, policy: &AugmentPolicy) -> Image {
    mixup_distortions_seeded(img, policy, policy.seed)
}

/// [`mixup_distortions`] with an explicit per-image seed.
pub fn mixup_distortions_seeded(img: &Image, policy: &AugmentPolicy, image_seed: u64) -> Image {
    let mut rng = seed::child_rng(image_seed, &[MIXUP_STREAM]);
    if rng.random::<f64>() >= policy.mixup_probability {
        return img.clone();
    }
    let mask: u32 = rng.random_range(1..64);
    let mut out = img.clone();
    for kind in DistortionKind::ALL {
        if mask & (1 << kind.ordinal()) == 0 {
            continue;
        }
        let level = Level(rng.random_range(1..=5));
        let spec = DistortionSpec { kind, level };
        let mut op_rng = seed::child_rng(image_seed, &[MIXUP_STREAM, kind.ordinal()]);
        // Only JPEG can fail, and only on empty images, which mixup leaves alone.
        if let Ok(next) = apply_with_rng(&out, spec, &mut op_rng) {
            out = next;
        }
    }
    out
}

fn rand_augment_step(img: &Image, which: usize, magnitude: f64, rng: &mut SeededRng) -> Image {
    let m = magnitude.clamp(0.0, 1.0);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    match which {
        0 => shift_brightness(img, (sign * 0.3 * m) as f32),
        1 => adjust_contrast(img, (1.0 + sign * 0.5 * m) as f32),
        2 => adjust_saturation(img, (1.0 + sign * 0.8 * m) as f32),
        3 => gaussian_blur(img, 2.0 * m),
        4 => add_gaussian_noise(img, 0.01 * m, rng),
        _ => posterize(img, (8.0 - 5.0 * m).round() as u32),
    }
}

const RAND_AUGMENT_MENU: usize = 6;

fn shift_brightness(img: &Image, delta: f32) -> Image {
    let mut out = img.clone();
    for c in out.as_mut_slice() {
        *c = (*c + delta).clamp(0.0, 1.0);
    }
    out
}

fn posterize(img: &Image, bits: u32) -> Image {
    let levels = ((1u32 << bits.clamp(1, 8)) - 1) as f32;
    let mut out = img.clone();
    for c in out.as_mut_slice() {
        *c = (*c * levels).round() / levels;
    }
    out
}

fn random_square_crop(img: &Image, min_scale: f64, rng: &mut SeededRng) -> Image {
    let (h, w) = img.dims();
    let side_max = h.min(w);
    let scale = rng.random_range(min_scale.clamp(0.0, 1.0)..=1.0);
    let side = ((side_max as f64 * scale).round() as usize).clamp(1, side_max);
    let y0 = rng.random_range(0..=h - side);
    let x0 = rng.random_range(0..=w - side);
    img.crop(y0, x0, side, side).expect("crop fits by construction")
}

fn patch_gaussian(img: &Image, size: usize, sigma: f64, rng: &mut SeededRng) -> Image {
    let (h, w) = img.dims();
    if size == 0 || h == 0 || w == 0 || sigma <= 0.0 {
        return img.clone();
    }
    let ph = size.min(h);
    let pw = size.min(w);
    let y0 = rng.random_range(0..=h - ph);
    let x0 = rng.random_range(0..=w - pw);
    let normal = Normal::new(0.0, sigma).expect("finite positive std");
    let mut out = img.clone();
    for y in y0..y0 + ph {
        for x in x0..x0 + pw {
            let mut px = out.pixel(y, x);
            for c in &mut px {
                *c = (*c as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
            }
            out.set_pixel(y, x, px);
        }
    }
    out
}

fn apply_extra(img: &Image, op: &ExtraOp, rng: &mut SeededRng) -> Image {
    match *op {
        ExtraOp::RandomFlip => img.flip_horizontal(),
        ExtraOp::RandomCrop { min_scale } => random_square_crop(img, min_scale, rng),
        ExtraOp::BrightnessContrast { brightness, contrast } => {
            let b = rng.random_range(-brightness.abs()..=brightness.abs()) as f32;
            let c = rng.random_range(1.0 - contrast.abs()..=1.0 + contrast.abs()) as f32;
            shift_brightness(&adjust_contrast(img, c), b)
        }
        ExtraOp::PatchGaussian { size, sigma } => patch_gaussian(img, size, sigma, rng),
        ExtraOp::ImageCompression { min_quality, max_quality } => {
            let (lo, hi) = (min_quality.min(max_quality), min_quality.max(max_quality));
            let q = rng.random_range(lo..=hi);
            jpeg_roundtrip(img, q).unwrap_or_else(|_| img.clone())
        }
        ExtraOp::GaussianBlur { max_sigma } => {
            let s = rng.random_range(0.0..=max_sigma.max(0.0));
            gaussian_blur(img, s)
        }
        ExtraOp::GaussianNoise { max_variance } => {
            let v = rng.random_range(0.0..=max_variance.max(0.0));
            add_gaussian_noise(img, v, rng)
        }
        ExtraOp::RandAugment { ops_per_image, magnitude } => {
            let mut out = img.clone();
            for _ in 0..ops_per_image {
                let which = rng.random_range(0..RAND_AUGMENT_MENU);
                out = rand_augment_step(&out, which, magnitude, rng);
            }
            out
        }
    }
}

/// Applies each extra op independently with its probability, in list order,
/// then resizes to the training resolution.
pub fn train_augment(img: &Image, policy: &AugmentPolicy) -> Image {
    train_augment_seeded(img, policy, policy.seed)
}

/// [`train_augment`] with an explicit per-image seed.
pub fn train_augment_seeded(img: &Image, policy: &AugmentPolicy, image_seed: u64) -> Image {
    let mut out = img.clone();
    for (i, op) in policy.extra_ops.iter().enumerate() {
        let mut rng = seed::child_rng(image_seed, &[EXTRA_STREAM, i as u64]);
        if rng.random::<f64>() < op.probability {
            out = apply_extra(&out, &op.op, &mut rng);
        }
    }
    out.resize_bilinear(policy.train_size, policy.train_size)
}

/// Full training transform: distortion mixup, then the extra ops.
pub fn augment_for_training(img: &Image, policy: &AugmentPolicy, image_seed: u64) -> Image {
    let mixed = mixup_distortions_seeded(img, policy, image_seed);
    train_augment_seeded(&mixed, policy, image_seed)
}
