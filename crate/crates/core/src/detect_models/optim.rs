use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with L2 weight decay folded into the gradient.
    Adam,
    /// Adam with decoupled weight decay.
    #[serde(rename = "adamw")]
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    #[serde(rename = "halve_every_5")]
    HalveEvery5,
}

impl LrSchedule {
    /// Learning rate for zero-based `epoch`.
    pub fn rate(self, base: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::HalveEvery5 => base * 0.5f64.powi((epoch / 5) as i32),
        }
    }
}

pub struct Adam {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: ParamSet,
    v: ParamSet,
    step: i32,
}

impl Adam {
    pub fn new(kind: OptimizerKind, params: &ParamSet, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let entries = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in entries {
            for i in 0..p.data.len() {
                let mut grad = g.data[i];
                match self.kind {
                    OptimizerKind::Adam => grad += self.weight_decay * p.data[i],
                    OptimizerKind::AdamW => p.data[i] -= lr * self.weight_decay * p.data[i],
                }
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * grad;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * grad * grad;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
