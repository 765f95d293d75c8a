//! Clip classifier: factorized spatio-temporal convolutions over a
//! `T × H × W` face clip.
//!
//! Each block is a spatial `1×k×k` conv followed by a temporal `3×1×1` conv,
//! each with softplus; global average pooling and a logistic head finish it.
//! The first spatial kernel is constrained to zero-sum taps.

use serde::{Deserialize, Serialize};

use super::ops::{self, conv3d, conv3d_backward, global_avg_pool, linear, linear_backward, sigmoid};
use super::tensor::{ParamSet, Tensor};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::seed;

pub const CLIP_FRAMES: usize = 64;
pub const CLIP_SIZES: [usize; 2] = [224, 112];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Allows clip shapes other than 64×224×224 / 64×112×112 (tests only).
    #[serde(default)]
    pub reduced: bool,
}

impl ClipSpec {
    pub fn new(frames: usize, height: usize, width: usize) -> Result<Self> {
        let spec = Self {
            frames,
            height,
            width,
            reduced: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn standard(size: usize) -> Result<Self> {
        Self::new(CLIP_FRAMES, size, size)
    }

    pub fn reduced(frames: usize, height: usize, width: usize) -> Result<Self> {
        let spec = Self {
            frames,
            height,
            width,
            reduced: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.reduced
            && (self.frames != CLIP_FRAMES || self.height != self.width || !CLIP_SIZES.contains(&self.height))
        {
            return Err(invalid!(
                "clip {}x{}x{} is not 64x224x224 or 64x112x112",
                self.frames,
                self.height,
                self.width
            ));
        }
        // Two temporal kernels of 3 (the second with stride 2) and a 4x then 3x3 spatial reduction.
        if self.frames < 5 || self.height < 12 || self.width < 12 {
            return Err(invalid!(
                "clip {}x{}x{} too small for the network",
                self.frames,
                self.height,
                self.width
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 4] {
        [3, self.frames, self.height, self.width]
    }
}

/// Resamples a face sequence to `spec.frames` frames (nearest, equal
/// intervals, repeating when short) at `height × width`.
pub fn build_clip(faces: &[Image], spec: &ClipSpec) -> Result<Tensor> {
    if faces.is_empty() {
        return Err(invalid!("cannot build a clip from zero faces"));
    }
    let n = faces.len();
    let frames: Vec<Image> = (0..spec.frames)
        .map(|j| faces[j * n / spec.frames].resize_bilinear(spec.height, spec.width))
        .collect();
    Ok(Tensor::from_frames(&frames).normalize_input())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Video3dSpec {
    pub clip: ClipSpec,
    pub channels: [usize; 2],
}

impl Video3dSpec {
    pub fn new(clip: ClipSpec) -> Self {
        Self {
            clip,
            channels: [6, 12],
        }
    }
}

struct Block {
    name: &'static str,
    stride: [usize; 3],
}

const BLOCKS: [Block; 4] = [
    Block { name: "s1", stride: [1, 4, 4] },
    Block { name: "t1", stride: [1, 1, 1] },
    Block { name: "s2", stride: [1, 2, 2] },
    Block { name: "t2", stride: [2, 1, 1] },
];

#[derive(Debug, Clone, PartialEq)]
pub struct Video3dNet {
    spec: Video3dSpec,
    params: ParamSet,
}

pub(crate) struct ClipCache {
    /// Input followed by each block's activation.
    acts: Vec<Tensor>,
    pooled: Vec<f64>,
}

impl Video3dNet {
    pub fn new(spec: Video3dSpec, init_seed: u64) -> Result<Self> {
        spec.clip.validate()?;
        let [c1, c2] = spec.channels;
        if c1 == 0 || c2 == 0 {
            return Err(invalid!("empty channel width"));
        }
        let mut rng = seed::rng(init_seed);
        let shapes: [[usize; 5]; 4] = [[c1, 3, 1, 4, 4], [c1, c1, 3, 1, 1], [c2, c1, 1, 3, 3], [c2, c2, 3, 1, 1]];
        let mut params = ParamSet::new();
        for (block, shape) in BLOCKS.iter().zip(shapes) {
            let fan_in = shape[1] * shape[2] * shape[3] * shape[4];
            params.insert(format!("{}.weight", block.name), ops::lecun_uniform(&shape, fan_in, &mut rng));
            params.insert(format!("{}.bias", block.name), Tensor::zeros(&[shape[0]]));
        }
        params.insert("head.weight", ops::lecun_uniform(&[1, c2], c2, &mut rng));
        params.insert("head.bias", Tensor::zeros(&[1]));
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: Video3dSpec, params: ParamSet) -> Result<Self> {
        let reference = Self::new(spec.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.try_get(name) {
                Some(p) if p.shape == t.shape => {}
                _ => return Err(invalid!("parameter {name} missing or misshapen")),
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &Video3dSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn forward_cached(&self, clip: &Tensor) -> Result<(f64, ClipCache)> {
        let want = self.spec.clip.shape();
        if clip.shape != want {
            return Err(invalid!("clip shape {:?}, expected {:?}", clip.shape, want));
        }
        let mut acts = vec![clip.clone()];
        for (i, block) in BLOCKS.iter().enumerate() {
            let w = self.params.get(&format!("{}.weight", block.name));
            let b = self.params.get(&format!("{}.bias", block.name));
            let stem;
            let w = if i == 0 {
                stem = ops::zero_sum_taps(w);
                &stem
            } else {
                w
            };
            let mut a = conv3d(acts.last().unwrap(), w, b, block.stride)?;
            ops::softplus_inplace(&mut a);
            acts.push(a);
        }
        let pooled = global_avg_pool(acts.last().unwrap());
        let z = linear(&pooled, self.params.get("head.weight"), self.params.get("head.bias"))[0];
        Ok((z, ClipCache { acts, pooled }))
    }

    pub(crate) fn backward(&self, cache: &ClipCache, dz: f64) -> ParamSet {
        let mut g = self.params.zeros_like();
        let (dpooled, dhw, dhb) = linear_backward(&cache.pooled, self.params.get("head.weight"), &[dz]);
        *g.get_mut("head.weight") = dhw;
        *g.get_mut("head.bias") = dhb;
        let mut dact = ops::global_avg_pool_backward(&cache.acts.last().unwrap().shape, &dpooled);
        for (i, block) in BLOCKS.iter().enumerate().rev() {
            let out = &cache.acts[i + 1];
            ops::softplus_backward(&out.data, &mut dact.data);
            let w = self.params.get(&format!("{}.weight", block.name));
            let grads = conv3d_backward(&cache.acts[i], w, &dact, block.stride, i > 0);
            *g.get_mut(&format!("{}.weight", block.name)) = if i == 0 {
                ops::zero_sum_taps(&grads.dw)
            } else {
                grads.dw
            };
            *g.get_mut(&format!("{}.bias", block.name)) = grads.db;
            if let Some(dx) = grads.dx {
                dact = dx;
            }
        }
        g
    }

    pub fn predict_clip(&self, clip: &Tensor) -> Result<f64> {
        Ok(sigmoid(self.forward_cached(clip)?.0))
    }

    /// Builds the clip from a face sequence and scores it.
    pub fn predict_faces(&self, faces: &[Image]) -> Result<f64> {
        self.predict_clip(&build_clip(faces, &self.spec.clip)?)
    }
}

/// Probability that the clip is fake.
pub fn video3d_forward(net: &Video3dNet, clip: &Tensor) -> Result<f64> {
    net.predict_clip(clip)
}
