//! Deterministic synthetic datasets, model training with caching, and the
//! ablation sweeps comparing frozen, naive-TTA and meta-TTA upsampling.
//!
//! Every sweep cell is computed independently and reduced in a fixed order,
//! so reports do not depend on the number of worker threads.

mod report;
mod sweeps;

pub use report::{SweepReport, SweepRow, TimingRow};
pub use sweeps::{
    domain_shift_experiment, inner_steps_sweep, noise_sweep, ratio_sweep, run_ablation, Ablation,
    DEFAULT_INNER_STEPS, DEFAULT_NOISE_LEVELS, DEFAULT_RATIOS,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Upsampler;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{add_gaussian_noise, generate_shape, ShapeFamily, ShapeSpec};
use crate::meta::{meta_test, meta_train, pretrain, MetaLogRecord, TrainingPair};
use crate::metrics::MetricReport;
use crate::sampling::downsample;

/// Which data split a generated set belongs to; each draws from its own stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Fresh shapes from the training families, for in-distribution baselines.
    Control,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169,
            Split::Test => 0x7465_7374,
            Split::Control => 0x6374_726c,
        }
    }
}

fn stream_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ split.tag().rotate_left(32));
    let base: u64 = rng.random();
    base.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Generates `count` pairs cycling through `families`. Test inputs receive
/// Gaussian noise at `noise`; the underlying noise draw is shared across
/// levels so only its magnitude changes.
pub fn generate_pairs(
    cfg: &RunConfig,
    families: &[ShapeFamily],
    count: usize,
    seed: u64,
    split: Split,
    noise: f64,
) -> Result<Vec<TrainingPair>> {
    if families.is_empty() {
        return Err(Error::Config("no shape families given".into()));
    }
    let dense = cfg.ratio * cfg.input_points;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, split, i));
            let shape = families[i % families.len()].random_shape(&mut rng);
            let spec = ShapeSpec::new(shape, rng.random());
            let noise_seed: u64 = rng.random();
            let y = if cfg.oversample > 1 {
                downsample(
                    &generate_shape(&spec, dense * cfg.oversample)?,
                    cfg.oversample,
                )?
            } else {
                generate_shape(&spec, dense)?
            };
            let mut x = downsample(&y, cfg.ratio)?;
            if noise > 0.0 {
                x = add_gaussian_noise(&x, noise, noise_seed)?;
            }
            Ok(TrainingPair::new(x, y))
        })
        .collect()
}

/// A supervised-only model and its meta-trained counterpart.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub pretrained: Upsampler,
    pub meta: Upsampler,
    pub pretrain_losses: Vec<f64>,
    pub meta_log: Vec<MetaLogRecord>,
}

pub fn pretrain_model(cfg: &RunConfig, seed: u64) -> Result<(Upsampler, Vec<f64>)> {
    let data = generate_pairs(
        cfg,
        &cfg.train_families,
        cfg.train_shapes,
        seed,
        Split::Train,
        0.0,
    )?;
    let init = Upsampler::init(cfg.backbone_config(seed))?;
    let out = pretrain(&init, &data, &cfg.pretrain_config(seed))?;
    Ok((out.model, out.epoch_losses))
}

pub fn meta_train_model(
    cfg: &RunConfig,
    pretrained: &Upsampler,
    seed: u64,
) -> Result<(Upsampler, Vec<MetaLogRecord>)> {
    let data = generate_pairs(
        cfg,
        &cfg.train_families,
        cfg.train_shapes,
        seed,
        Split::Train,
        0.0,
    )?;
    let out = meta_train(pretrained, &data, &cfg.meta_config(seed))?;
    Ok((out.model, out.log))
}

/// Trained models keyed by what determines them, so sweeps that share a
/// seed and ratio reuse one pre-training run.
#[derive(Default)]
pub struct ModelCache {
    pretrained: BTreeMap<(u64, usize), (Upsampler, Vec<f64>)>,
    meta: BTreeMap<(u64, usize, usize), (Upsampler, Vec<MetaLogRecord>)>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trains whatever is missing for `seeds` under `cfg`, seeds in parallel.
    pub fn prepare(&mut self, cfg: &RunConfig, seeds: &[u64]) -> Result<()> {
        let missing: Vec<u64> = seeds
            .iter()
            .copied()
            .filter(|&s| !self.pretrained.contains_key(&(s, cfg.ratio)))
            .collect();
        let trained = missing
            .par_iter()
            .map(|&s| pretrain_model(cfg, s))
            .collect::<Result<Vec<_>>>()?;
        for (s, t) in missing.into_iter().zip(trained) {
            self.pretrained.insert((s, cfg.ratio), t);
        }
        let missing: Vec<u64> = seeds
            .iter()
            .copied()
            .filter(|&s| !self.meta.contains_key(&(s, cfg.ratio, cfg.inner_steps)))
            .collect();
        let pre = &self.pretrained;
        let trained = missing
            .par_iter()
            .map(|&s| meta_train_model(cfg, &pre[&(s, cfg.ratio)].0, s))
            .collect::<Result<Vec<_>>>()?;
        for (s, t) in missing.into_iter().zip(trained) {
            self.meta.insert((s, cfg.ratio, cfg.inner_steps), t);
        }
        Ok(())
    }

    pub fn get(&mut self, cfg: &RunConfig, seed: u64) -> Result<TrainedModels> {
        self.prepare(cfg, &[seed])?;
        let (pretrained, pretrain_losses) = self.pretrained[&(seed, cfg.ratio)].clone();
        let (meta, meta_log) = self.meta[&(seed, cfg.ratio, cfg.inner_steps)].clone();
        Ok(TrainedModels {
            pretrained,
            meta,
            pretrain_losses,
            meta_log,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Frozen,
    NaiveTta,
    MetaTta,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Frozen, Method::NaiveTta, Method::MetaTta];

    pub fn name(self) -> &'static str {
        match self {
            Method::Frozen => "frozen",
            Method::NaiveTta => "naive-tta",
            Method::MetaTta => "meta-tta",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown method `{s}` (expected frozen, naive-tta or meta-tta)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub adapt_ms: f64,
    pub infer_ms: f64,
}

/// Upsamples `pair.x` with `method` and scores it against `pair.y`. Naive
/// TTA runs the meta-test procedure on the supervised-only weights.
pub fn evaluate(
    models: &TrainedModels,
    method: Method,
    pair: &TrainingPair,
    cfg: &RunConfig,
) -> Result<Evaluation> {
    let meta_cfg = cfg.meta_config(0);
    let (y, adapt_ms, infer_ms) = match method {
        Method::Frozen => {
            let start = std::time::Instant::now();
            let (y, _) = models.pretrained.forward(&pair.x)?;
            (y, 0.0, start.elapsed().as_secs_f64() * 1e3)
        }
        Method::NaiveTta => {
            let out = meta_test(&models.pretrained, &pair.x, &meta_cfg)?;
            (out.y, out.adapt_ms, out.infer_ms)
        }
        Method::MetaTta => {
            let out = meta_test(&models.meta, &pair.x, &meta_cfg)?;
            (out.y, out.adapt_ms, out.infer_ms)
        }
    };
    Ok(Evaluation {
        report: MetricReport::evaluate(&y, &pair.y, adapt_ms + infer_ms),
        adapt_ms,
        infer_ms,
    })
}

/// Runs `f` on a pool capped by `MPU_THREADS` when it is set.
pub fn with_thread_limit<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var("MPU_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::Config(format!("MPU_THREADS must be a positive integer, got `{v}`"))
            })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}
