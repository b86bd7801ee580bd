//! Resolved run configuration. Every run writes one beside its outputs, and
//! `levaudit replay` rebuilds the run from it alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use levaudit_core::diff_models::Activation;
use levaudit_core::mia_audit::{AuditConfig, PlantedOutlierConfig};
use levaudit_core::{AlphaGrid, Architecture, CgConfig, LayerMask, LossKind, Scalarization, Space, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// The output directory is not part of the snapshot: runs never write into
/// an existing directory, so a replay always names a fresh one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub format: Format,
    pub command: CommandConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum CommandConfig {
    Leverage(LeverageConfig),
    Simulate(SimulateConfig),
    Gls(GlsConfig),
    Train(TrainCommandConfig),
    Audit(AuditCommandConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Leverage(_) => "leverage",
            Self::Simulate(_) => "simulate",
            Self::Gls(_) => "gls",
            Self::Train(_) => "train",
            Self::Audit(_) => "audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageConfig {
    pub input: PathBuf,
    pub intercept: bool,
    pub sigma2: f64,
    pub alpha_grid: AlphaGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimDesign {
    /// One column; row 0 has leverage `h`, the other `n − 1` rows are ones.
    SingleLeverage { h: Vec<f64>, n: usize },
    File { path: PathBuf, target_index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub design: SimDesign,
    pub m: Vec<u32>,
    pub sigma2: f64,
    pub trials: usize,
    pub alpha_grid: AlphaGrid,
    pub emit_norms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsConfig {
    pub input: PathBuf,
    pub checkpoint: PathBuf,
    /// `None` means every sample.
    pub targets: Option<Vec<usize>>,
    pub loss: LossKind,
    pub cg: CgConfig,
    pub mask: LayerMask,
    pub space: Space,
    pub scalar: Scalarization,
    pub oracle_dense: bool,
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCommandConfig {
    pub input: PathBuf,
    pub arch: Architecture,
    pub loss: LossKind,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditData {
    File { path: PathBuf },
    PlantedOutliers(PlantedOutlierConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCommandConfig {
    pub data: AuditData,
    pub audit: AuditConfig,
}

/// `linear`, `linear-bias`, `logistic`, `mlp:H[,H..]` (tanh) or
/// `mlp-softplus:H[,H..]`, resolved against the data dimensions.
pub fn parse_model(text: &str, d: usize, m: usize) -> Result<Architecture, CliError> {
    let hidden = |s: &str| -> Result<Vec<usize>, CliError> {
        s.split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::usage(format!("bad hidden widths {s:?} in model {text:?}")))
    };
    let mlp = |s: &str, activation| -> Result<Architecture, CliError> {
        let mut widths = vec![d];
        widths.extend(hidden(s)?);
        widths.push(m);
        Ok(Architecture::Mlp { widths, activation })
    };
    let arch = match text {
        "linear" => Architecture::Linear { d, m, bias: false },
        "linear-bias" => Architecture::Linear { d, m, bias: true },
        "logistic" => Architecture::Logistic { d, m },
        s => {
            if let Some(h) = s.strip_prefix("mlp:") {
                mlp(h, Activation::Tanh)?
            } else if let Some(h) = s.strip_prefix("mlp-softplus:") {
                mlp(h, Activation::SoftplusRelu)?
            } else {
                return Err(CliError::usage(format!(
                    "unknown model {text:?}; expected linear, linear-bias, logistic, mlp:H or mlp-softplus:H"
                )));
            }
        }
    };
    arch.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(arch)
}

/// `all`, an empty string, or a comma-separated list of indices.
pub fn parse_targets(s: &str) -> Result<Option<Vec<usize>>, CliError> {
    let s = s.trim();
    if s == "all" {
        return Ok(None);
    }
    if s.is_empty() {
        return Ok(Some(Vec::new()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
        .map_err(|_| CliError::usage(format!("bad target list {s:?}")))
}

pub fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    fs::canonicalize(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}
