//! Supervised pre-training, MAML-style meta-training and test-time adaptation.
//!
//! Inner task for an input cloud `x`: downsample it by the model ratio to
//! `x_down` and fit `F(x_down)` to `x` with a few plain gradient steps. The
//! outer objective scores the adapted parameters on the real pair `(x, y)`.

mod adam;
mod adapt;
mod maml;
mod train;

pub use adam::AdamState;
pub use adapt::{
    inner_adapt, inner_adapt_with, meta_test, naive_tta, self_supervised_task, ChamferObjective,
    InnerTask, MetaTestOutput,
};
pub use maml::{adapt_params, meta_gradient, MetaGradient, Objective};
pub use train::{
    mean_loss, meta_train, pretrain, MetaLogRecord, MetaTrainOutcome, PretrainConfig,
    PretrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::sampling::SamplingMethod;

/// How the outer gradient is propagated through the inner updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Outer gradient evaluated at the adapted parameters and applied as is.
    #[default]
    FirstOrder,
    /// Exact chain rule through every inner step using Hessian-vector products.
    FdHvp,
}

/// How per-pair outer gradients are combined over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchReduction {
    #[default]
    Sum,
    Mean,
}

/// Meta-training settings. The defaults suit the desk-scale backbone, whose
/// offsets are measured in units of the input point spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner (adaptation) learning rate.
    pub alpha: f64,
    /// Outer (meta) learning rate.
    pub beta: f64,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub gradient_mode: GradientMode,
    pub ratio: usize,
    pub max_meta_iters: usize,
    pub seed: u64,
    pub batch_reduction: BatchReduction,
    /// Outer-gradient norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub sampling: SamplingMethod,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            inner_steps: 5,
            batch_size: 8,
            gradient_mode: GradientMode::FirstOrder,
            ratio: 4,
            max_meta_iters: 300,
            seed: 0,
            batch_reduction: BatchReduction::Sum,
            grad_clip: None,
            sampling: SamplingMethod::Farthest,
        }
    }
}

impl MetaConfig {
    /// Learning rates tuned for large upsampling backbones.
    pub fn large_backbone() -> Self {
        Self {
            alpha: 1e-5,
            beta: 1e-6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Parameter(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Parameter(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if self.inner_steps > 32 {
            return Err(Error::Parameter(format!(
                "inner_steps must be <= 32, got {}",
                self.inner_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Parameter(format!(
                    "grad_clip must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse input with its dense ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub x: PointCloud,
    pub y: PointCloud,
}

impl TrainingPair {
    pub fn new(x: PointCloud, y: PointCloud) -> Self {
        Self { x, y }
    }
}

pub(crate) fn check_pairs(data: &[TrainingPair], ratio: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Parameter("training data is empty".into()));
    }
    for (index, p) in data.iter().enumerate() {
        if p.y.len() != ratio * p.x.len() {
            return Err(Error::Data {
                index,
                message: format!(
                    "dense cloud has {} points, expected {} x {} = {}",
                    p.y.len(),
                    ratio,
                    p.x.len(),
                    ratio * p.x.len()
                ),
            });
        }
    }
    Ok(())
}
