use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::report::aggregate;
use super::{
    evaluate, generate_pairs, Evaluation, Method, ModelCache, Split, SweepReport, TrainedModels,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::meta::TrainingPair;

pub const DEFAULT_NOISE_LEVELS: [f64; 4] = [0.0, 0.005, 0.01, 0.02];
pub const DEFAULT_RATIOS: [usize; 3] = [4, 8, 16];
pub const DEFAULT_INNER_STEPS: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Noise,
    Ratio,
    InnerSteps,
    DomainShift,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Noise,
        Ablation::Ratio,
        Ablation::InnerSteps,
        Ablation::DomainShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Noise => "noise",
            Ablation::Ratio => "ratio",
            Ablation::InnerSteps => "inner-steps",
            Ablation::DomainShift => "domain-shift",
        }
    }

    fn condition_name(self) -> &'static str {
        match self {
            Ablation::Noise => "noise_level",
            Ablation::Ratio => "ratio",
            Ablation::InnerSteps => "inner_steps",
            Ablation::DomainShift => "split",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}` (expected noise, ratio, inner-steps or domain-shift)"
                ))
            })
    }
}

/// Timing passes over every condition of a sweep. Each job keeps its fastest
/// pass; passes cycle through the conditions so that machine drift is shared.
pub const TIMING_ROUNDS: usize = 5;

struct Cell {
    condition: String,
    cfg: RunConfig,
    methods: Vec<Method>,
    models: Vec<TrainedModels>,
    sets: Vec<Vec<TrainingPair>>,
    best: Vec<Vec<Evaluation>>,
}

impl Cell {
    fn run(&self) -> Result<Vec<Vec<Evaluation>>> {
        let jobs: Vec<(usize, usize)> = self
            .sets
            .iter()
            .enumerate()
            .flat_map(|(s, set)| (0..set.len()).map(move |i| (s, i)))
            .collect();
        jobs.par_iter()
            .map(|&(s, i)| {
                self.methods
                    .iter()
                    .map(|&m| evaluate(&self.models[s], m, &self.sets[s][i], &self.cfg))
                    .collect()
            })
            .collect()
    }
}

struct Sweep<'a> {
    report: SweepReport,
    cells: Vec<Cell>,
    cache: &'a mut ModelCache,
}

impl<'a> Sweep<'a> {
    fn new(ablation: Ablation, cache: &'a mut ModelCache) -> Self {
        Sweep {
            report: SweepReport {
                ablation: ablation.name().to_string(),
                condition_name: ablation.condition_name().to_string(),
                rows: Vec::new(),
                timing: Vec::new(),
            },
            cells: Vec::new(),
            cache,
        }
    }

    /// Evaluates `methods` on every (seed, shape) job of one condition and
    /// appends one row per method. `pairs_for(seed)` yields that seed's test set.
    fn condition(
        &mut self,
        condition: &str,
        cfg: &RunConfig,
        methods: &[Method],
        pairs_for: impl Fn(u64) -> Result<Vec<TrainingPair>> + Sync,
    ) -> Result<()> {
        self.cache.prepare(cfg, &cfg.seeds)?;
        let models = cfg
            .seeds
            .iter()
            .map(|&s| self.cache.get(cfg, s))
            .collect::<Result<_>>()?;
        let sets: Vec<Vec<TrainingPair>> = cfg
            .seeds
            .par_iter()
            .map(|&s| pairs_for(s))
            .collect::<Result<_>>()?;
        let mut cell = Cell {
            condition: condition.to_string(),
            cfg: cfg.clone(),
            methods: methods.to_vec(),
            models,
            sets,
            best: Vec::new(),
        };
        cell.best = cell.run()?;
        let shapes = cell.sets.first().map_or(0, Vec::len);
        for (k, &method) in methods.iter().enumerate() {
            let samples: Vec<Evaluation> = cell.best.iter().map(|r| r[k]).collect();
            let (row, _) = aggregate(condition, method, &samples, shapes, cfg.seeds.len());
            self.report.rows.push(row);
        }
        self.cells.push(cell);
        Ok(())
    }

    fn finish(mut self) -> Result<SweepReport> {
        for _ in 1..TIMING_ROUNDS {
            for cell in &mut self.cells {
                let passes = cell.run()?;
                for (best, pass) in cell.best.iter_mut().zip(passes) {
                    for (b, p) in best.iter_mut().zip(pass) {
                        b.adapt_ms = b.adapt_ms.min(p.adapt_ms);
                        b.infer_ms = b.infer_ms.min(p.infer_ms);
                    }
                }
            }
        }
        for cell in &self.cells {
            let shapes = cell.sets.first().map_or(0, Vec::len);
            for (k, &method) in cell.methods.iter().enumerate() {
                let samples: Vec<Evaluation> = cell.best.iter().map(|r| r[k]).collect();
                let (_, timing) = aggregate(
                    &cell.condition,
                    method,
                    &samples,
                    shapes,
                    cell.cfg.seeds.len(),
                );
                self.report.timing.push(timing);
            }
        }
        Ok(self.report)
    }
}

fn test_pairs(cfg: &RunConfig, seed: u64, noise: f64) -> Result<Vec<TrainingPair>> {
    generate_pairs(
        cfg,
        &cfg.test_families,
        cfg.test_shapes,
        seed,
        Split::Test,
        noise,
    )
}

/// Models trained on clean data, evaluated on test inputs at each noise level.
pub fn noise_sweep(cfg: &RunConfig, levels: &[f64], cache: &mut ModelCache) -> Result<SweepReport> {
    let mut sweep = Sweep::new(Ablation::Noise, cache);
    for &level in levels {
        let cell = RunConfig {
            noise_level: level,
            ..cfg.clone()
        };
        cell.validate()?;
        sweep.condition(&level.to_string(), &cell, &Method::ALL, |s| {
            test_pairs(&cell, s, level)
        })?;
    }
    sweep.finish()
}

/// Trains and evaluates a separate model per upsampling ratio.
pub fn ratio_sweep(
    cfg: &RunConfig,
    ratios: &[usize],
    cache: &mut ModelCache,
) -> Result<SweepReport> {
    let mut sweep = Sweep::new(Ablation::Ratio, cache);
    for &ratio in ratios {
        let cell = RunConfig {
            ratio,
            ..cfg.clone()
        };
        cell.validate()?;
        sweep.condition(&ratio.to_string(), &cell, &Method::ALL, |s| {
            test_pairs(&cell, s, cell.noise_level)
        })?;
    }
    sweep.finish()
}

/// Meta-trains and adapts with the same number of inner steps per value.
pub fn inner_steps_sweep(
    cfg: &RunConfig,
    steps: &[usize],
    cache: &mut ModelCache,
) -> Result<SweepReport> {
    let mut sweep = Sweep::new(Ablation::InnerSteps, cache);
    for &n in steps {
        let cell = RunConfig {
            inner_steps: n,
            ..cfg.clone()
        };
        cell.validate()?;
        sweep.condition(&n.to_string(), &cell, &Method::ALL, |s| {
            test_pairs(&cell, s, cell.noise_level)
        })?;
    }
    sweep.finish()
}

/// Trains on `train_families` and evaluates every method on the disjoint
/// `test_families` (`shifted` rows). A frozen row on fresh shapes from the
/// training families gives the in-distribution baseline.
pub fn domain_shift_experiment(cfg: &RunConfig, cache: &mut ModelCache) -> Result<SweepReport> {
    cfg.validate()?;
    let mut sweep = Sweep::new(Ablation::DomainShift, cache);
    sweep.condition("shifted", cfg, &Method::ALL, |s| {
        test_pairs(cfg, s, cfg.noise_level)
    })?;
    sweep.condition("in-distribution", cfg, &[Method::Frozen], |s| {
        generate_pairs(
            cfg,
            &cfg.train_families,
            cfg.test_shapes,
            s,
            Split::Control,
            cfg.noise_level,
        )
    })?;
    sweep.finish()
}

fn as_counts(values: &[f64], what: &str) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "{what} values must be nonnegative integers, got {v}"
                )))
            }
        })
        .collect()
}

/// Runs `ablation` over `values`, or over its default grid when `values` is
/// empty. Domain shift takes no values.
pub fn run_ablation(
    cfg: &RunConfig,
    ablation: Ablation,
    values: &[f64],
    cache: &mut ModelCache,
) -> Result<SweepReport> {
    match ablation {
        Ablation::Noise if values.is_empty() => noise_sweep(cfg, &DEFAULT_NOISE_LEVELS, cache),
        Ablation::Noise => noise_sweep(cfg, values, cache),
        Ablation::Ratio if values.is_empty() => ratio_sweep(cfg, &DEFAULT_RATIOS, cache),
        Ablation::Ratio => ratio_sweep(cfg, &as_counts(values, "ratio")?, cache),
        Ablation::InnerSteps if values.is_empty() => {
            inner_steps_sweep(cfg, &DEFAULT_INNER_STEPS, cache)
        }
        Ablation::InnerSteps => inner_steps_sweep(cfg, &as_counts(values, "inner-steps")?, cache),
        Ablation::DomainShift if values.is_empty() => domain_shift_experiment(cfg, cache),
        Ablation::DomainShift => Err(Error::Config("domain-shift takes no --values".into())),
    }
}
