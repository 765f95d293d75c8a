//! One TOML file per run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect_models::{TrainConfig, DEFAULT_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::perturb::AugmentPolicy;
use crate::scoring::{PipelineConfig, Variant};
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    #[default]
    Pooled,
    PerSource,
    Off,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub balance: BalanceMode,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub augment: AugmentPolicy,
    #[serde(default)]
    pub paths: Paths,
}

fn default_feature_dim() -> usize {
    DEFAULT_FEATURE_DIM
}

impl RunConfig {
    pub fn preset(variant: Variant, seed: u64) -> Self {
        let pipeline = PipelineConfig::preset(variant);
        let size = pipeline.out_size;
        let (train, augment) = match variant {
            Variant::Champion => (TrainConfig::champion(), AugmentPolicy::distortion_mixup(size, 0)),
            Variant::DualBranch => (TrainConfig::dual_branch(), AugmentPolicy::dual_branch(size, 0)),
            Variant::Clip3d => (TrainConfig::clip3d(), AugmentPolicy::clip(size, 0)),
        };
        Self {
            seed,
            balance: BalanceMode::Pooled,
            feature_dim: DEFAULT_FEATURE_DIM,
            pipeline,
            train,
            augment,
            paths: Paths::default(),
        }
        .with_seed(seed)
    }

    /// Sets the run seed and the training and augmentation seeds derived from it.
    pub fn with_seed(mut self, run_seed: u64) -> Self {
        self.seed = run_seed;
        self.train.seed = seed::derive(run_seed, &[1]);
        self.augment.seed = seed::derive(run_seed, &[2]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.augment.train_size != self.pipeline.out_size {
            return Err(Error::Config(format!(
                "augment.train_size {} differs from pipeline.out_size {}",
                self.augment.train_size, self.pipeline.out_size
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_roundtrip_through_toml() {
        for v in [Variant::Champion, Variant::DualBranch, Variant::Clip3d] {
            let cfg = RunConfig::preset(v, 7);
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn seed_propagates() {
        let a = RunConfig::preset(Variant::Champion, 1);
        let b = RunConfig::preset(Variant::Champion, 2);
        assert_ne!(a.train.seed, b.train.seed);
        assert_ne!(a.augment.seed, b.augment.seed);
        assert_eq!(a, RunConfig::preset(Variant::Champion, 1));
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let mut cfg = RunConfig::preset(Variant::Champion, 1);
        cfg.augment.train_size = 320;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("seed = 1").is_err());
    }
}
