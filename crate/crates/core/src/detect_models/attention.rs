//! Softmax attention over per-frame features and the temporal classifier
//! built on it.
//!
//! For frame features `f_t` (t = 1..T):
//!
//! ```text
//! s_t = w2 · tanh(W1ᵀ f_t + b1) + b2
//! a   = softmax(s)
//! out = Σ_t a_t f_t
//! ```

use serde::{Deserialize, Serialize};

use super::ops::{self, linear, linear_backward, sigmoid};
use super::tensor::{ParamSet, Tensor};
use crate::error::{invalid, Result};
use crate::seed;

/// Sum that does not depend on the order of `values`.
fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFusionParams {
    pub feature_dim: usize,
    pub hidden: usize,
    /// `feature_dim × hidden`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl AttentionFusionParams {
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self {
            feature_dim,
            hidden,
            w1: vec![0.0; feature_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn random(feature_dim: usize, hidden: usize, init_seed: u64) -> Self {
        let mut rng = seed::rng(init_seed);
        Self {
            feature_dim,
            hidden,
            w1: ops::lecun_uniform(&[feature_dim, hidden], feature_dim, &mut rng).data,
            b1: vec![0.0; hidden],
            w2: ops::lecun_uniform(&[hidden], hidden, &mut rng).data,
            b2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.feature_dim, self.hidden);
        if d == 0 || h == 0 {
            return Err(invalid!("attention dims must be positive ({d}, {h})"));
        }
        if self.w1.len() != d * h || self.b1.len() != h || self.w2.len() != h {
            return Err(invalid!("attention parameter shapes inconsistent with d={d}, h={h}"));
        }
        let finite = self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite());
        if !finite || !self.b2.is_finite() {
            return Err(invalid!("attention parameters contain non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub fused: Vec<f64>,
    pub weights: Vec<f64>,
}

pub(crate) struct FusionCache {
    hidden: Vec<Vec<f64>>,
}

fn fuse_cached(features: &[Vec<f64>], p: &AttentionFusionParams) -> Result<(Fusion, FusionCache)> {
    if features.is_empty() {
        return Err(invalid!("attention needs at least one frame"));
    }
    let (d, h) = (p.feature_dim, p.hidden);
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(invalid!("frame feature has {} dims, expected {d}", f.len()));
    }
    let mut hidden = Vec::with_capacity(features.len());
    let mut scores = Vec::with_capacity(features.len());
    for f in features {
        let u: Vec<f64> = (0..h)
            .map(|j| {
                let a = p.b1[j] + (0..d).map(|i| f[i] * p.w1[i * h + j]).sum::<f64>();
                a.tanh()
            })
            .collect();
        scores.push(p.b2 + u.iter().zip(&p.w2).map(|(a, b)| a * b).sum::<f64>());
        hidden.push(u);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total = canonical_sum(&mut exps.clone());
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut terms = vec![0.0; features.len()];
    let fused = (0..d)
        .map(|i| {
            for (slot, (w, f)) in terms.iter_mut().zip(weights.iter().zip(features)) {
                *slot = w * f[i];
            }
            canonical_sum(&mut terms)
        })
        .collect();
    Ok((Fusion { fused, weights }, FusionCache { hidden }))
}

/// Attention-weighted average of `T × d` frame features.
pub fn attention_fuse(features: &[Vec<f64>], params: &AttentionFusionParams) -> Result<Fusion> {
    Ok(fuse_cached(features, params)?.0)
}

/// Gradients of the attention parameters and of the inputs.
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub params: AttentionFusionParams,
    pub features: Vec<Vec<f64>>,
}

pub(crate) fn fuse_backward(
    features: &[Vec<f64>],
    p: &AttentionFusionParams,
    fusion: &Fusion,
    cache: &FusionCache,
    dfused: &[f64],
) -> FusionGrads {
    let (d, h) = (p.feature_dim, p.hidden);
    let mut g = AttentionFusionParams::zeros(d, h);
    let mut dfeat: Vec<Vec<f64>> = fusion
        .weights
        .iter()
        .map(|&w| dfused.iter().map(|g| w * g).collect())
        .collect();
    let dweights: Vec<f64> = features
        .iter()
        .map(|f| f.iter().zip(dfused).map(|(a, b)| a * b).sum())
        .collect();
    let mean: f64 = fusion.weights.iter().zip(&dweights).map(|(w, g)| w * g).sum();
    for (t, f) in features.iter().enumerate() {
        let ds = fusion.weights[t] * (dweights[t] - mean);
        g.b2 += ds;
        let u = &cache.hidden[t];
        for j in 0..h {
            g.w2[j] += ds * u[j];
            let da = ds * p.w2[j] * (1.0 - u[j] * u[j]);
            g.b1[j] += da;
            for i in 0..d {
                g.w1[i * h + j] += f[i] * da;
                dfeat[t][i] += p.w1[i * h + j] * da;
            }
        }
    }
    FusionGrads {
        params: g,
        features: dfeat,
    }
}

/// Attention fusion followed by a logistic head.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModel {
    params: ParamSet,
    feature_dim: usize,
    hidden: usize,
}

pub(crate) struct TemporalCache {
    fusion: Fusion,
    cache: FusionCache,
}

impl TemporalModel {
    /// Hidden width defaults to `feature_dim / 2`.
    pub fn new(feature_dim: usize, hidden: Option<usize>, init_seed: u64) -> Result<Self> {
        let hidden = hidden.unwrap_or((feature_dim / 2).max(1));
        let attn = AttentionFusionParams::random(feature_dim, hidden, init_seed);
        attn.validate()?;
        let mut rng = seed::child_rng(init_seed, &[1]);
        let head = ops::lecun_uniform(&[1, feature_dim], feature_dim, &mut rng);
        let mut model = Self {
            params: ParamSet::new(),
            feature_dim,
            hidden,
        };
        model.params.insert("attn.w1", Tensor::from_vec(&[feature_dim, hidden], attn.w1)?);
        model.params.insert("attn.b1", Tensor::from_vec(&[hidden], attn.b1)?);
        model.params.insert("attn.w2", Tensor::from_vec(&[hidden], attn.w2)?);
        model.params.insert("attn.b2", Tensor::from_vec(&[1], vec![attn.b2])?);
        model.params.insert("head.weight", head);
        model.params.insert("head.bias", Tensor::zeros(&[1]));
        Ok(model)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let w1 = params
            .try_get("attn.w1")
            .ok_or_else(|| invalid!("missing attn.w1"))?;
        let &[d, h] = w1.shape.as_slice() else {
            return Err(invalid!("attn.w1 must be rank 2"));
        };
        let reference = Self::new(d, Some(h), 0)?;
        for (name, t) in reference.params.iter() {
            match params.try_get(name) {
                Some(p) if p.shape == t.shape => {}
                _ => return Err(invalid!("parameter {name} missing or misshapen")),
            }
        }
        Ok(Self {
            params,
            feature_dim: d,
            hidden: h,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn attention(&self) -> AttentionFusionParams {
        let p = &self.params;
        AttentionFusionParams {
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            w1: p.get("attn.w1").data.clone(),
            b1: p.get("attn.b1").data.clone(),
            w2: p.get("attn.w2").data.clone(),
            b2: p.get("attn.b2").data[0],
        }
    }

    pub(crate) fn forward_cached(&self, features: &[Vec<f64>]) -> Result<(f64, TemporalCache)> {
        let (fusion, cache) = fuse_cached(features, &self.attention())?;
        let z = linear(&fusion.fused, self.params.get("head.weight"), self.params.get("head.bias"))[0];
        Ok((z, TemporalCache { fusion, cache }))
    }

    pub(crate) fn backward(&self, features: &[Vec<f64>], cache: &TemporalCache, dz: f64) -> ParamSet {
        self.backward_with_inputs(features, cache, dz).0
    }

    /// Parameter gradients together with d logit-loss / d features.
    pub(crate) fn backward_with_inputs(
        &self,
        features: &[Vec<f64>],
        cache: &TemporalCache,
        dz: f64,
    ) -> (ParamSet, Vec<Vec<f64>>) {
        let (dfused, dhw, dhb) = linear_backward(&cache.fusion.fused, self.params.get("head.weight"), &[dz]);
        let fg = fuse_backward(features, &self.attention(), &cache.fusion, &cache.cache, &dfused);
        let mut g = self.params.zeros_like();
        g.get_mut("attn.w1").data = fg.params.w1;
        g.get_mut("attn.b1").data = fg.params.b1;
        g.get_mut("attn.w2").data = fg.params.w2;
        g.get_mut("attn.b2").data = vec![fg.params.b2];
        *g.get_mut("head.weight") = dhw;
        *g.get_mut("head.bias") = dhb;
        (g, fg.features)
    }

    /// Fake probability for one video's frame features.
    pub fn predict_features(&self, features: &[Vec<f64>]) -> Result<f64> {
        Ok(sigmoid(self.forward_cached(features)?.0))
    }
}
