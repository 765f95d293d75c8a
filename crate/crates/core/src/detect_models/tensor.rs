use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;

pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Maps `[0, 1]` intensities to roughly zero mean, unit scale.
    pub fn normalize_input(mut self) -> Tensor {
        for v in &mut self.data {
            *v = (*v - INPUT_MEAN) / INPUT_STD;
        }
        self
    }

    /// `[3, 1, H, W]` planar tensor for a single image.
    pub fn from_image(img: &Image) -> Tensor {
        Tensor::from_frames(std::slice::from_ref(img))
    }

    /// `[3, T, H, W]` planar tensor for equally sized frames.
    pub fn from_frames(frames: &[Image]) -> Tensor {
        let t = frames.len();
        let (h, w) = frames.first().map(|f| f.dims()).unwrap_or((0, 0));
        let plane = h * w;
        let mut data = vec![0.0; 3 * t * plane];
        for (ti, frame) in frames.iter().enumerate() {
            debug_assert_eq!(frame.dims(), (h, w));
            for (p, px) in frame.as_slice().chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[(c * t + ti) * plane + p] = px[c] as f64;
                }
            }
        }
        Tensor {
            shape: vec![3, t, h, w],
            data,
        }
    }
}

/// Ordered collection of named parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|(n, _)| *n != name), "duplicate {name}");
        self.entries.push((name, t));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.try_get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values());
        let mut off = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// `self += alpha * other`, matching entries by position.
    pub fn add_scaled(&mut self, other: &ParamSet, alpha: f64) {
        assert_eq!(self.entries.len(), other.entries.len());
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in &mut self.entries {
            t.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy with `prefix` prepended to every name.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
                .collect(),
        }
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|rest| (rest.to_string(), t.clone())))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamSet) {
        for (n, t) in other.entries {
            self.insert(n, t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_to_planar() {
        let a = Image::from_fn(2, 2, |y, x| [(y * 2 + x) as f32 / 4.0, 0.5, 1.0]);
        let t = Tensor::from_frames(&[a.clone(), a]);
        assert_eq!(t.shape, vec![3, 2, 2, 2]);
        assert_eq!(t.data[3], 0.75);
        assert_eq!(t.data[4 + 1], 0.25);
        assert_eq!(t.data[8], 0.5);
    }

    #[test]
    fn flat_roundtrip() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        p.insert("b", Tensor::from_vec(&[1, 1], vec![3.0]).unwrap());
        let flat = p.flatten();
        let mut q = p.zeros_like();
        q.set_flat(&flat);
        assert_eq!(p, q);
        q.add_scaled(&p, 2.0);
        assert_eq!(q.get("b").data, vec![9.0]);
    }
}
