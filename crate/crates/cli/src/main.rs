//! `levaudit`: leverage scores, simulation, generalized leverage scores and
//! membership-inference audits from the command line.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levaudit_core::diff_models::{load_checkpoint, Optimizer};
use levaudit_core::mia_audit::{AuditConfig, ObservationScale, PlantedOutlierConfig};
use levaudit_core::{AlphaGrid, CgConfig, LayerMask, LossKind, Scalarization, Space, TrainConfig};

use crate::config::{
    absolute, parse_model, parse_targets, AuditCommandConfig, AuditData, CommandConfig, Format, GlsConfig,
    LeverageConfig, RunConfig, SimDesign, SimulateConfig, TrainCommandConfig,
};
use crate::error::CliError;

pub const THREADS_ENV: &str = "LEVAUDIT_THREADS";

#[derive(Parser)]
#[command(name = "levaudit", version, about = "Per-sample membership-inference vulnerability via leverage scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// OLS leverage, residual norms, optimal statistic and trade-off curves.
    Leverage(LeverageArgs),
    /// Monte-Carlo trade-off curves against theory per (h, m) cell.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Generalized leverage scores of a checkpoint.
    Gls(GlsArgs),
    /// Train, attack with shadow models, correlate with GLS.
    Audit(AuditArgs),
    /// Re-run from a config snapshot.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// Fresh output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct LeverageArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Append a constant column to X.
    #[arg(long)]
    intercept: bool,
    #[arg(long, default_value_t = AlphaGrid::default())]
    alpha_grid: AlphaGrid,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Design CSV; its X is used and `--h` is ignored.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    target_index: usize,
    /// Leverages of the synthetic single-column design.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
    h: Vec<f64>,
    /// Output dimensions.
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    m: Vec<u32>,
    /// Rows of the synthetic design.
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 200_000)]
    trials: usize,
    #[arg(long, default_value_t = AlphaGrid::default())]
    alpha_grid: AlphaGrid,
    /// Also write the raw member and non-member norms.
    #[arg(long)]
    emit_norms: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// linear, linear-bias, logistic, mlp:H[,H..] or mlp-softplus:H[,H..].
    #[arg(long, default_value = "logistic")]
    model: String,
    /// quadratic or cross_entropy; defaults to the model's natural loss.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
    /// Plain gradient descent instead of L-BFGS.
    #[arg(long)]
    gradient_descent: bool,
}

#[derive(Args)]
struct CgArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cg_iters: Option<usize>,
    #[arg(long)]
    cg_tol: Option<f64>,
    /// Samples per Hessian accumulation batch; 0 is one batch.
    #[arg(long, default_value_t = 0)]
    batch_size: usize,
    #[arg(long)]
    gauss_newton: bool,
    #[arg(long, default_value = "full")]
    layers: LayerMask,
    #[arg(long, default_value_t = Scalarization::Trace)]
    scalar: Scalarization,
}

impl CgArgs {
    fn config(&self) -> CgConfig {
        let d = CgConfig::default();
        CgConfig {
            damping: self.lambda.unwrap_or(d.damping),
            max_iters: self.cg_iters.unwrap_or(d.max_iters),
            residual_tol: self.cg_tol.unwrap_or(d.residual_tol),
            batch_size: self.batch_size,
            gauss_newton: self.gauss_newton,
        }
    }
}

#[derive(Args)]
struct GlsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `all`, or comma-separated sample indices (possibly empty).
    #[arg(long, default_value = "all")]
    targets: String,
    #[arg(long)]
    loss: Option<String>,
    /// logit or probability; probability is the default for cross-entropy.
    #[arg(long)]
    space: Option<Space>,
    #[command(flatten)]
    cg: CgArgs,
    /// Also run the dense-inverse path and report the largest discrepancy.
    #[arg(long, value_parser = ["dense"])]
    oracle: Option<String>,
    /// Exit 4 if conjugate gradient fails for any target.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset with one-hot labels; the planted-outlier task when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Planted-outlier sample count.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "logistic")]
    model: String,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long, default_value_t = 32)]
    shadows: usize,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value = "probability")]
    space: Space,
    #[command(flatten)]
    cg: CgArgs,
    /// raw, log or logit transform of the per-sample loss before the Gaussian fits.
    #[arg(long, default_value = "raw")]
    observation: ObservationScale,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// Share of members in each of the top and bottom GLS groups.
    #[arg(long, default_value_t = 0.02)]
    quantile: f64,
    #[arg(long, default_value_t = AlphaGrid::default())]
    alpha_grid: AlphaGrid,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_loss(s: &str) -> Result<LossKind, CliError> {
    match s {
        "quadratic" => Ok(LossKind::Quadratic),
        "cross_entropy" | "cross-entropy" => Ok(LossKind::CrossEntropy),
        _ => Err(CliError::usage(format!("unknown loss {s:?}; expected quadratic or cross_entropy"))),
    }
}

fn run_config(c: &Common, command: CommandConfig) -> RunConfig {
    RunConfig {
        seed: c.seed,
        format: c.format,
        command,
    }
}

fn resolve(command: Command) -> Result<(RunConfig, PathBuf), CliError> {
    Ok(match command {
        Command::Leverage(a) => {
            let cfg = LeverageConfig {
                input: absolute(&a.input)?,
                intercept: a.intercept,
                sigma2: a.sigma2,
                alpha_grid: a.alpha_grid,
            };
            (run_config(&a.common, CommandConfig::Leverage(cfg)), a.common.out)
        }
        Command::Simulate(a) => {
            let design = match &a.input {
                Some(p) => SimDesign::File {
                    path: absolute(p)?,
                    target_index: a.target_index,
                },
                None => SimDesign::SingleLeverage { h: a.h.clone(), n: a.rows },
            };
            let cfg = SimulateConfig {
                design,
                m: a.m.clone(),
                sigma2: a.sigma2,
                trials: a.trials,
                alpha_grid: a.alpha_grid,
                emit_norms: a.emit_norms,
            };
            (run_config(&a.common, CommandConfig::Simulate(cfg)), a.common.out)
        }
        Command::Train(a) => {
            let input = absolute(&a.input)?;
            let data = commands::load_dataset(&input)?;
            let arch = parse_model(&a.model, data.d(), data.m())?;
            let loss = match &a.loss {
                Some(l) => parse_loss(l)?,
                None => arch.default_loss(),
            };
            let train = TrainConfig {
                optimizer: if a.gradient_descent {
                    Optimizer::GradientDescent
                } else {
                    Optimizer::Lbfgs
                },
                max_epochs: a.max_epochs,
                tolerance: a.tolerance,
                l2: a.l2,
                seed: a.common.seed,
                ..TrainConfig::default()
            };
            let cfg = TrainCommandConfig { input, arch, loss, train };
            (run_config(&a.common, CommandConfig::Train(cfg)), a.common.out)
        }
        Command::Gls(a) => {
            let checkpoint = absolute(&a.checkpoint)?;
            let model = load_checkpoint(&checkpoint)
                .map_err(|e| CliError::loading(&format!("checkpoint {}", checkpoint.display()), e))?;
            let loss = match &a.loss {
                Some(l) => parse_loss(l)?,
                None => model.meta.loss.unwrap_or_else(|| model.arch().default_loss()),
            };
            let space = a.space.unwrap_or(match loss {
                LossKind::CrossEntropy => Space::Probability,
                LossKind::Quadratic => Space::Logit,
            });
            let cfg = GlsConfig {
                input: absolute(&a.input)?,
                checkpoint,
                targets: parse_targets(&a.targets)?,
                loss,
                cg: a.cg.config(),
                mask: a.cg.layers.clone(),
                space,
                scalar: a.cg.scalar,
                oracle_dense: a.oracle.is_some(),
                strict: a.strict,
            };
            (run_config(&a.common, CommandConfig::Gls(cfg)), a.common.out)
        }
        Command::Audit(a) => {
            let (data, d, m) = match &a.input {
                Some(p) => {
                    let path = absolute(p)?;
                    let ds = commands::load_dataset(&path)?;
                    (AuditData::File { path }, ds.d(), ds.m())
                }
                None => {
                    let mut p = PlantedOutlierConfig {
                        seed: a.common.seed,
                        ..PlantedOutlierConfig::default()
                    };
                    if let Some(n) = a.samples {
                        p.n = n;
                    }
                    let (d, m) = (p.d, p.classes);
                    (AuditData::PlantedOutliers(p), d, m)
                }
            };
            let arch = parse_model(&a.model, d, m)?;
            let mut audit = AuditConfig::new(arch, a.common.seed);
            audit.template.train.l2 = a.l2;
            audit.shadows = a.shadows;
            audit.fraction = a.fraction;
            audit.cg = a.cg.config();
            audit.mask = a.cg.layers.clone();
            audit.space = a.space;
            audit.scalar = a.cg.scalar;
            audit.scale = a.observation;
            audit.permutations = a.permutations;
            audit.quantile = a.quantile;
            audit.alpha_grid = a.alpha_grid;
            let cfg = AuditCommandConfig { data, audit };
            (run_config(&a.common, CommandConfig::Audit(cfg)), a.common.out)
        }
        Command::Replay(a) => (RunConfig::load(&a.config)?, a.out),
    })
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (cfg, out) = resolve(cli.command)?;
    log::info!("{} -> {}", cfg.command.name(), Path::new(&out).display());
    commands::execute(&cfg, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
