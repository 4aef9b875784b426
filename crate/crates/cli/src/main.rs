//! `metaup`: generate synthetic data, train, upsample and run ablation sweeps.
//!
//! Failures print a single `error[<kind>]: <message>` line to stderr and exit
//! with status 1 (2 for command-line usage errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metaup::backbone::{read_checkpoint, write_checkpoint, Upsampler};
use metaup::config::RunConfig;
use metaup::error::{Error, Result};
use metaup::harness::{
    generate_pairs, meta_train_model, pretrain_model, run_ablation, with_thread_limit, Ablation,
    ModelCache, Split,
};
use metaup::io::{read_point_cloud, write_point_cloud};
use metaup::meta::{meta_test, GradientMode, MetaLogRecord};
use metaup::metrics::MetricReport;

#[derive(Parser)]
#[command(
    name = "metaup",
    version,
    about = "Meta-learned test-time adaptation for point cloud upsampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand; flags override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    ratio: Option<usize>,
    #[arg(long, global = true)]
    inner_steps: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Outer-gradient propagation used by meta-training.
    #[arg(long, global = true, value_enum)]
    gradient_mode: Option<GradientArg>,
    #[arg(long, global = true)]
    noise_level: Option<f64>,
    /// Replaces the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradientArg {
    FirstOrder,
    FdHvp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Frozen,
    NaiveTta,
    MetaTta,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Noise,
    Ratio,
    InnerSteps,
    DomainShift,
}

#[derive(Subcommand)]
enum Command {
    /// Write generated sparse/dense pairs as binary PLY files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Supervised pre-training on generated training shapes.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Meta-training starting from a pre-trained checkpoint.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Checkpoint path to write; the iteration log goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upsample one sparse cloud.
    Upsample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Dense cloud to write (`.xyz` or `.ply`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "meta-tta")]
        mode: ModeArg,
        /// Ground truth; when given a metric report is printed.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Run an ablation grid and write its report files.
    EvalSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        ablation: AblationArg,
        /// Noise levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
        /// Ratios or inner-step counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.ratio {
            cfg.ratio = v;
        }
        if let Some(v) = self.inner_steps {
            cfg.inner_steps = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gradient_mode {
            cfg.gradient_mode = match v {
                GradientArg::FirstOrder => GradientMode::FirstOrder,
                GradientArg::FdHvp => GradientMode::FdHvp,
            };
        }
        if let Some(v) = self.noise_level {
            cfg.noise_level = v;
        }
        if let Some(v) = self.seed {
            cfg.seeds = vec![v];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }
}

/// Loads a checkpoint and checks it against the ratio of the config file or
/// `--ratio`. Without either, the checkpoint's ratio is adopted.
fn load_checkpoint(path: &Path, common: &Common, cfg: &mut RunConfig) -> Result<Upsampler> {
    let model = read_checkpoint(path).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::Config(format!("checkpoint `{}` not found", path.display()))
        }
        other => other,
    })?;
    let explicit = common.ratio.is_some() || common.config.is_some();
    if explicit && cfg.ratio != model.ratio() {
        return Err(Error::Config(format!(
            "checkpoint `{}` has ratio {} but ratio {} was requested",
            path.display(),
            model.ratio(),
            cfg.ratio
        )));
    }
    cfg.ratio = model.ratio();
    cfg.validate()?;
    Ok(model)
}

fn default_out(cfg: &RunConfig, name: &str) -> PathBuf {
    Path::new(&cfg.out_dir).join(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, split, out } => {
            let cfg = common.load()?;
            let seed = common.seed(&cfg);
            let dir = out.unwrap_or_else(|| default_out(&cfg, "data"));
            let (families, count, split, noise, tag) = match split {
                SplitArg::Train => (
                    &cfg.train_families,
                    cfg.train_shapes,
                    Split::Train,
                    0.0,
                    "train",
                ),
                SplitArg::Test => (
                    &cfg.test_families,
                    cfg.test_shapes,
                    Split::Test,
                    cfg.noise_level,
                    "test",
                ),
            };
            let pairs =
                with_thread_limit(|| generate_pairs(&cfg, families, count, seed, split, noise))??;
            std::fs::create_dir_all(&dir)?;
            for (i, p) in pairs.iter().enumerate() {
                write_point_cloud(&p.x, &dir.join(format!("{tag}_{i:03}_input.ply")))?;
                write_point_cloud(&p.y, &dir.join(format!("{tag}_{i:03}_gt.ply")))?;
            }
            println!("wrote {} pairs to {}", pairs.len(), dir.display());
        }
        Command::Pretrain { common, out } => {
            let cfg = common.load()?;
            let seed = common.seed(&cfg);
            let out = out.unwrap_or_else(|| default_out(&cfg, "pretrained.ckpt"));
            let (model, losses) = with_thread_limit(|| pretrain_model(&cfg, seed))??;
            ensure_parent(&out)?;
            write_checkpoint(&model, &out)?;
            let mut log = String::from("epoch\tloss\n");
            for (e, l) in losses.iter().enumerate() {
                log.push_str(&format!("{e}\t{l:.9}\n"));
            }
            std::fs::write(with_suffix(&out, ".loss.tsv"), log)?;
            println!(
                "final loss {:.6}; wrote {}",
                losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::MetaTrain {
            common,
            checkpoint,
            out,
        } => {
            let mut cfg = common.load()?;
            let pretrained = load_checkpoint(&checkpoint, &common, &mut cfg)?;
            let seed = common.seed(&cfg);
            let out = out.unwrap_or_else(|| default_out(&cfg, "meta.ckpt"));
            let (model, log) = with_thread_limit(|| meta_train_model(&cfg, &pretrained, seed))??;
            ensure_parent(&out)?;
            write_checkpoint(&model, &out)?;
            let file = std::fs::File::create(with_suffix(&out, ".log.tsv"))?;
            MetaLogRecord::write_log(&log, std::io::BufWriter::new(file))?;
            println!("{} iterations; wrote {}", log.len(), out.display());
        }
        Command::Upsample {
            common,
            checkpoint,
            input,
            out,
            mode,
            gt,
        } => {
            let mut cfg = common.load()?;
            let model = load_checkpoint(&checkpoint, &common, &mut cfg)?;
            let x = read_point_cloud(&input)?;
            let start = std::time::Instant::now();
            let y = match mode {
                ModeArg::Frozen => model.forward(&x)?.0,
                ModeArg::NaiveTta | ModeArg::MetaTta => {
                    meta_test(&model, &x, &cfg.meta_config(0))?.y
                }
            };
            let ms = start.elapsed().as_secs_f64() * 1e3;
            ensure_parent(&out)?;
            write_point_cloud(&y, &out)?;
            if let Some(gt) = gt {
                let report = MetricReport::evaluate(&y, &read_point_cloud(&gt)?, ms);
                let text = format!("{}\n{}\n", MetricReport::TSV_HEADER, report.to_tsv());
                std::fs::write(with_suffix(&out, ".metrics.tsv"), &text)?;
                print!("{text}");
            }
        }
        Command::EvalSweep {
            common,
            ablation,
            levels,
            values,
            out,
        } => {
            let cfg = common.load()?;
            let ablation = match ablation {
                AblationArg::Noise => Ablation::Noise,
                AblationArg::Ratio => Ablation::Ratio,
                AblationArg::InnerSteps => Ablation::InnerSteps,
                AblationArg::DomainShift => Ablation::DomainShift,
            };
            let grid = match (ablation, levels.is_empty(), values.is_empty()) {
                (Ablation::Noise, _, true) => levels,
                (_, true, _) => values,
                _ => {
                    return Err(Error::Config(format!(
                        "--levels applies to the noise ablation only; use --values for {ablation}"
                    )))
                }
            };
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
            let report =
                with_thread_limit(|| run_ablation(&cfg, ablation, &grid, &mut ModelCache::new()))??;
            report.write_files(&dir)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
