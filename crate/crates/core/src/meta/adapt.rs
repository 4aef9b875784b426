use std::time::Instant;

use super::maml::{adapt_params, Objective};
use super::MetaConfig;
use crate::autodiff::{hvp, ParameterSet};
use crate::backbone::Upsampler;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::sampling::{downsample_with, SamplingMethod};

/// Self-supervised pair built from a single sparse cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerTask {
    pub input: PointCloud,
    pub target: PointCloud,
}

/// Mean Chamfer loss of `F(input)` against `target` as a function of the
/// parameters. Its Hessian-vector products hold the nearest-neighbor
/// correspondences fixed at the evaluation point, so the finite-difference
/// probe differentiates the same smooth surrogate the gradient comes from.
#[derive(Clone, Copy, Debug)]
pub struct ChamferObjective<'a> {
    pub model: &'a Upsampler,
    pub input: &'a PointCloud,
    pub target: &'a PointCloud,
}

impl Objective for ChamferObjective<'_> {
    fn loss_and_grad(&self, params: &ParameterSet) -> Result<(f64, ParameterSet)> {
        self.model.loss_and_grad(params, self.input, self.target)
    }

    fn hvp(&self, params: &ParameterSet, v: &ParameterSet) -> Result<ParameterSet> {
        let matches = self.model.matches(params, self.input, self.target)?;
        hvp(
            |p: &ParameterSet| {
                self.model
                    .loss_and_grad_matched(p, self.input, self.target, &matches)
            },
            params,
            v,
        )
    }
}

impl InnerTask {
    pub fn objective<'a>(&'a self, model: &'a Upsampler) -> ChamferObjective<'a> {
        ChamferObjective {
            model,
            input: &self.input,
            target: &self.target,
        }
    }
}

/// Downsamples `x` by `ratio` so that `x` itself becomes the target. The
/// task input has exactly `|x| / ratio` points, so `x` must hold at least
/// `4 * ratio` of them.
pub fn self_supervised_task(
    x: &PointCloud,
    ratio: usize,
    sampling: SamplingMethod,
    seed: u64,
) -> Result<InnerTask> {
    if x.len() < 4 * ratio {
        return Err(Error::DegenerateInput(format!(
            "adaptation needs at least {} input points for ratio {}, got {}",
            4 * ratio,
            ratio,
            x.len()
        )));
    }
    Ok(InnerTask {
        input: downsample_with(x, ratio, sampling, seed)?,
        target: x.clone(),
    })
}

/// Adapts `params` to `x` with `steps` descent steps on the inner task.
pub fn inner_adapt_with(
    model: &Upsampler,
    params: &ParameterSet,
    x: &PointCloud,
    steps: usize,
    alpha: f64,
    sampling: SamplingMethod,
) -> Result<ParameterSet> {
    if steps == 0 {
        return Ok(params.clone());
    }
    let task = self_supervised_task(x, model.ratio(), sampling, 0)?;
    let trajectory = adapt_params(params, &task.objective(model), steps, alpha)?;
    Ok(trajectory.into_iter().last().expect("non-empty"))
}

/// [`inner_adapt_with`] from the model's own weights using farthest point sampling.
pub fn inner_adapt(
    model: &Upsampler,
    x: &PointCloud,
    steps: usize,
    alpha: f64,
) -> Result<ParameterSet> {
    inner_adapt_with(
        model,
        model.params(),
        x,
        steps,
        alpha,
        SamplingMethod::Farthest,
    )
}

#[derive(Clone, Debug)]
pub struct MetaTestOutput {
    pub y: PointCloud,
    pub adapted: ParameterSet,
    pub adapt_ms: f64,
    pub infer_ms: f64,
}

/// Adapts to `x` using `cfg.inner_steps` and `cfg.alpha`, then upsamples `x`
/// with the adapted weights. The model itself is left untouched.
pub fn meta_test(model: &Upsampler, x: &PointCloud, cfg: &MetaConfig) -> Result<MetaTestOutput> {
    let start = Instant::now();
    let adapted = inner_adapt_with(
        model,
        model.params(),
        x,
        cfg.inner_steps,
        cfg.alpha,
        cfg.sampling,
    )?;
    let adapt_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let y = model.forward_with(&adapted, x)?;
    let infer_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(MetaTestOutput {
        y,
        adapted,
        adapt_ms,
        infer_ms,
    })
}

/// Same adaptation as [`meta_test`], applied to weights that were never
/// meta-trained.
pub fn naive_tta(
    pretrained: &Upsampler,
    x: &PointCloud,
    steps: usize,
    alpha: f64,
) -> Result<PointCloud> {
    let adapted = inner_adapt(pretrained, x, steps, alpha)?;
    pretrained.forward_with(&adapted, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::geometry::{generate_shape, Shape, ShapeSpec};

    fn setup() -> (Upsampler, PointCloud) {
        let model = Upsampler::init(BackboneConfig {
            feature_dim: 8,
            ..Default::default()
        })
        .unwrap();
        let x = generate_shape(&ShapeSpec::new(Shape::Sphere { radius: 0.4 }, 1), 64).unwrap();
        (model, x)
    }

    #[test]
    fn zero_steps_equals_frozen_forward() {
        let (model, x) = setup();
        let cfg = MetaConfig {
            inner_steps: 0,
            ..Default::default()
        };
        let out = meta_test(&model, &x, &cfg).unwrap();
        let (frozen, _) = model.forward(&x).unwrap();
        assert_eq!(out.y, frozen);
    }

    #[test]
    fn adaptation_is_deterministic() {
        let (model, x) = setup();
        let a = inner_adapt(&model, &x, 3, 0.05).unwrap();
        let b = inner_adapt(&model, &x, 3, 0.05).unwrap();
        assert_eq!(a, b);
        assert_ne!(&a, model.params());
    }

    #[test]
    fn output_cardinality() {
        let (model, x) = setup();
        let out = meta_test(&model, &x, &MetaConfig::default()).unwrap();
        assert_eq!(out.y.len(), 4 * x.len());
    }

    #[test]
    fn too_few_points_rejected() {
        let (model, _) = setup();
        let x = generate_shape(&ShapeSpec::new(Shape::Sphere { radius: 0.4 }, 1), 12).unwrap();
        assert!(matches!(
            inner_adapt(&model, &x, 1, 0.01),
            Err(Error::DegenerateInput(_))
        ));
    }
}
