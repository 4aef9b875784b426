use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::AdamState;
use super::adapt::{self_supervised_task, ChamferObjective};
use super::maml::{meta_gradient, MetaGradient};
use super::{check_pairs, BatchReduction, MetaConfig, TrainingPair};
use crate::autodiff::ParameterSet;
use crate::backbone::Upsampler;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            base_lr: 1e-4,
            decay: 0.99,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Upsampler,
    /// Mean training loss observed during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean supervised loss of `params` over `data`.
pub fn mean_loss(model: &Upsampler, params: &ParameterSet, data: &[TrainingPair]) -> Result<f64> {
    let losses = data
        .par_iter()
        .map(|p| model.loss_forward(params, &p.x, &p.y).map(|(l, _, _)| l))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Supervised training with one Adam step per pair, visiting pairs in a
/// freshly shuffled order every epoch.
pub fn pretrain(
    model: &Upsampler,
    data: &[TrainingPair],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    check_pairs(data, model.ratio())?;
    if !(cfg.base_lr.is_finite() && cfg.base_lr >= 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate must be finite and >= 0, got {}",
            cfg.base_lr
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.params().clone();
    let mut adam = AdamState::new(&params, cfg.base_lr, cfg.decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = adam.lr_for_epoch(epoch);
        let mut total = 0.0;
        for &i in &order {
            let pair = &data[i];
            let (loss, grad) = model.loss_and_grad(&params, &pair.x, &pair.y)?;
            if let Some(name) = grad.first_non_finite() {
                return Err(Error::NonFinite {
                    iteration: epoch,
                    pair: i,
                    parameter: name.to_string(),
                });
            }
            adam.update(&mut params, &grad, lr)?;
            total += loss;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(PretrainOutcome {
        model: model.with_params(params)?,
        epoch_losses,
    })
}

/// One line of the meta-training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaLogRecord {
    pub iteration: usize,
    pub outer_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

impl MetaLogRecord {
    pub const TSV_HEADER: &'static str = "iter\touter_loss\tgrad_norm\twall_ms";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.9}\t{:.9}\t{:.3}",
            self.iteration, self.outer_loss, self.grad_norm, self.wall_ms
        )
    }

    pub fn write_log<W: Write>(records: &[MetaLogRecord], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::TSV_HEADER)?;
        for r in records {
            writeln!(w, "{}", r.to_tsv())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MetaTrainOutcome {
    pub model: Upsampler,
    pub log: Vec<MetaLogRecord>,
}

fn pair_gradient(
    model: &Upsampler,
    theta: &ParameterSet,
    pair: &TrainingPair,
    cfg: &MetaConfig,
) -> Result<MetaGradient> {
    let task = self_supervised_task(&pair.x, model.ratio(), cfg.sampling, 0)?;
    let outer = ChamferObjective {
        model,
        input: &pair.x,
        target: &pair.y,
    };
    meta_gradient(
        theta,
        &task.objective(model),
        &outer,
        cfg.inner_steps,
        cfg.alpha,
        cfg.gradient_mode,
    )
}

fn check_finite(iteration: usize, pair: usize, g: &MetaGradient) -> Result<()> {
    let bad = g
        .gradient
        .first_non_finite()
        .map(str::to_string)
        .or_else(|| (!g.outer_loss.is_finite()).then(|| "outer_loss".to_string()));
    match bad {
        Some(parameter) => Err(Error::NonFinite {
            iteration,
            pair,
            parameter,
        }),
        None => Ok(()),
    }
}

/// Meta-trains `model` for `cfg.max_meta_iters` outer iterations.
///
/// Pairs in a batch are processed in parallel, but their gradients are
/// summed in batch order so results do not depend on the thread count.
pub fn meta_train(
    model: &Upsampler,
    data: &[TrainingPair],
    cfg: &MetaConfig,
) -> Result<MetaTrainOutcome> {
    cfg.validate()?;
    if cfg.ratio != model.ratio() {
        return Err(Error::Config(format!(
            "meta config ratio {} does not match model ratio {}",
            cfg.ratio,
            model.ratio()
        )));
    }
    check_pairs(data, model.ratio())?;
    for (index, p) in data.iter().enumerate() {
        if p.x.len() < 4 * cfg.ratio {
            return Err(Error::Data {
                index,
                message: format!(
                    "sparse cloud has {} points, need at least {}",
                    p.x.len(),
                    4 * cfg.ratio
                ),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = model.params().clone();
    let mut log = Vec::with_capacity(cfg.max_meta_iters);
    for iteration in 0..cfg.max_meta_iters {
        let start = Instant::now();
        let batch: Vec<usize> = if cfg.batch_size <= data.len() {
            rand::seq::index::sample(&mut rng, data.len(), cfg.batch_size).into_vec()
        } else {
            (0..cfg.batch_size)
                .map(|_| rng.random_range(0..data.len()))
                .collect()
        };
        let grads = batch
            .par_iter()
            .map(|&i| pair_gradient(model, &theta, &data[i], cfg))
            .collect::<Vec<Result<MetaGradient>>>();

        let mut total = theta.zeros_like();
        let mut outer_loss = 0.0;
        for (&pair, g) in batch.iter().zip(grads) {
            let g = g?;
            check_finite(iteration, pair, &g)?;
            total.axpy_in_place(1.0, &g.gradient)?;
            outer_loss += g.outer_loss;
        }
        if cfg.batch_reduction == BatchReduction::Mean {
            let n = batch.len() as f64;
            total = total.scaled(1.0 / n);
            outer_loss /= n;
        }
        let grad_norm = total.norm();
        if let Some(cap) = cfg.grad_clip {
            if grad_norm > cap {
                total = total.scaled(cap / grad_norm);
            }
        }
        theta.axpy_in_place(-cfg.beta, &total)?;
        log.push(MetaLogRecord {
            iteration,
            outer_loss,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(MetaTrainOutcome {
        model: model.with_params(theta)?,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::geometry::{generate_shape, PointCloud, Shape, ShapeSpec};
    use crate::sampling::downsample;

    fn pairs(n: usize) -> Vec<TrainingPair> {
        (0..n)
            .map(|i| {
                let y = generate_shape(
                    &ShapeSpec::new(
                        Shape::Sphere {
                            radius: 0.3 + 0.02 * i as f64,
                        },
                        i as u64,
                    ),
                    256,
                )
                .unwrap();
                TrainingPair::new(downsample(&y, 4).unwrap(), y)
            })
            .collect()
    }

    fn small_model() -> Upsampler {
        Upsampler::init(BackboneConfig {
            feature_dim: 8,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn ratio_mismatch_names_pair() {
        let mut data = pairs(3);
        let y = data[2].y.clone();
        data[2].x = PointCloud::new(y.points()[..10].to_vec()).unwrap();
        match pretrain(&small_model(), &data, &PretrainConfig::default()) {
            Err(Error::Data { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pretraining_is_seeded() {
        let data = pairs(3);
        let cfg = PretrainConfig {
            epochs: 2,
            base_lr: 1e-3,
            ..Default::default()
        };
        let a = pretrain(&small_model(), &data, &cfg).unwrap();
        let b = pretrain(&small_model(), &data, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn meta_train_logs_every_iteration_and_is_deterministic() {
        let data = pairs(4);
        let cfg = MetaConfig {
            max_meta_iters: 3,
            batch_size: 2,
            ..Default::default()
        };
        let a = meta_train(&small_model(), &data, &cfg).unwrap();
        let b = meta_train(&small_model(), &data, &cfg).unwrap();
        assert_eq!(a.log.len(), 3);
        assert_eq!(a.model.params(), b.model.params());
        let mut buf = Vec::new();
        MetaLogRecord::write_log(&a.log, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn non_finite_gradient_reports_location() {
        let theta = small_model().params().clone();
        let mut gradient = theta.zeros_like();
        gradient.get_mut("dec.0.w").unwrap().data_mut()[5] = f64::NAN;
        let g = MetaGradient {
            outer_loss: 1.0,
            gradient,
            adapted: theta.clone(),
        };
        match check_finite(7, 3, &g) {
            Err(Error::NonFinite {
                iteration,
                pair,
                parameter,
            }) => {
                assert_eq!((iteration, pair, parameter.as_str()), (7, 3, "dec.0.w"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let g = MetaGradient {
            outer_loss: f64::INFINITY,
            gradient: theta.zeros_like(),
            adapted: theta,
        };
        assert!(check_finite(0, 0, &g).is_err());
    }

    #[test]
    fn meta_ratio_must_match_model() {
        let cfg = MetaConfig {
            ratio: 8,
            ..Default::default()
        };
        assert!(matches!(
            meta_train(&small_model(), &pairs(2), &cfg),
            Err(Error::Config(_))
        ));
    }
}
