//! Flat TOML run configuration shared by the command line and the harness.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, SUPPORTED_RATIOS};
use crate::error::{Error, Result};
use crate::geometry::ShapeFamily;
use crate::meta::{BatchReduction, GradientMode, MetaConfig, PretrainConfig};
use crate::sampling::SamplingMethod;

/// Every knob of a run. Missing keys take their defaults; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_families: Vec<ShapeFamily>,
    pub test_families: Vec<ShapeFamily>,
    pub train_shapes: usize,
    pub test_shapes: usize,
    /// Points in each sparse input cloud.
    pub input_points: usize,
    /// Dense ground truth is a farthest-point subset of a surface sample this
    /// many times larger; `1` uses the raw uniform sample.
    pub oversample: usize,
    /// Gaussian noise on test inputs, as a fraction of the bounding-box diagonal.
    pub noise_level: f64,
    pub seeds: Vec<u64>,

    pub ratio: usize,
    pub feature_dim: usize,
    pub hidden_layers: usize,
    pub offset_scale: f64,

    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_decay: f64,

    pub alpha: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub gradient_mode: GradientMode,
    pub max_meta_iters: usize,
    pub batch_reduction: BatchReduction,
    pub grad_clip: Option<f64>,
    pub sampling: SamplingMethod,

    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_families: vec![
                ShapeFamily::Sphere,
                ShapeFamily::Superellipsoid,
                ShapeFamily::Cylinder,
            ],
            test_families: vec![ShapeFamily::Torus, ShapeFamily::BumpPlane],
            train_shapes: 48,
            test_shapes: 20,
            input_points: 64,
            oversample: 4,
            noise_level: 0.0,
            seeds: vec![0, 1, 2],
            ratio: 4,
            feature_dim: 32,
            hidden_layers: 2,
            offset_scale: 1.0,
            pretrain_epochs: 200,
            pretrain_lr: 2e-3,
            pretrain_decay: 0.99,
            alpha: 0.5,
            beta: 1.0,
            inner_steps: 5,
            batch_size: 8,
            gradient_mode: GradientMode::FirstOrder,
            max_meta_iters: 300,
            batch_reduction: BatchReduction::Sum,
            grad_clip: None,
            sampling: SamplingMethod::Farthest,
            out_dir: "runs".into(),
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    let text = e.to_string();
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    Error::Config(lines.join("; "))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn backbone_config(&self, seed: u64) -> BackboneConfig {
        BackboneConfig {
            ratio: self.ratio,
            feature_dim: self.feature_dim,
            hidden_layers: self.hidden_layers,
            offset_scale: self.offset_scale,
            seed,
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            base_lr: self.pretrain_lr,
            decay: self.pretrain_decay,
            seed,
        }
    }

    pub fn meta_config(&self, seed: u64) -> MetaConfig {
        MetaConfig {
            alpha: self.alpha,
            beta: self.beta,
            inner_steps: self.inner_steps,
            batch_size: self.batch_size,
            gradient_mode: self.gradient_mode,
            ratio: self.ratio,
            max_meta_iters: self.max_meta_iters,
            seed,
            batch_reduction: self.batch_reduction,
            grad_clip: self.grad_clip,
            sampling: self.sampling,
        }
    }

    /// Families present in both the training and the test set.
    pub fn overlapping_families(&self) -> Vec<ShapeFamily> {
        let train: BTreeSet<_> = self.train_families.iter().collect();
        let test: BTreeSet<_> = self.test_families.iter().collect();
        train.intersection(&test).map(|f| **f).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_families.is_empty() || self.test_families.is_empty() {
            return Err(Error::Config(
                "train_families and test_families must be nonempty".into(),
            ));
        }
        let overlap = self.overlapping_families();
        if !overlap.is_empty() {
            let names: Vec<&str> = overlap.iter().map(|f| f.name()).collect();
            return Err(Error::Config(format!(
                "train and test families overlap: {}",
                names.join(", ")
            )));
        }
        if self.train_shapes == 0 || self.test_shapes == 0 {
            return Err(Error::Config(
                "train_shapes and test_shapes must be positive".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if !SUPPORTED_RATIOS.contains(&self.ratio) {
            return Err(Error::Config(format!(
                "ratio {} is not one of {SUPPORTED_RATIOS:?}",
                self.ratio
            )));
        }
        if self.input_points < 4 * self.ratio {
            return Err(Error::Config(format!(
                "input_points {} is below 4 x ratio = {}",
                self.input_points,
                4 * self.ratio
            )));
        }
        if self.oversample == 0 {
            return Err(Error::Config("oversample must be >= 1".into()));
        }
        if !(0.0..=0.1).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "noise_level must be in [0, 0.1], got {}",
                self.noise_level
            )));
        }
        if !(self.pretrain_lr.is_finite() && self.pretrain_lr >= 0.0) {
            return Err(Error::Config(format!(
                "pretrain_lr must be >= 0, got {}",
                self.pretrain_lr
            )));
        }
        self.backbone_config(0).validate().map_err(config_error)?;
        self.meta_config(0).validate().map_err(config_error)?;
        Ok(())
    }
}
