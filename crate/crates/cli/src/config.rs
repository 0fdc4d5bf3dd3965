//! Run configuration: JSON file values overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use twinmix::optim::OptimConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub simulate: SimulateConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub sampler: SamplerSection,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            threads: None,
            simulate: SimulateConfig::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            sampler: SamplerSection::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub frac_mz: f64,
    pub frac_male: f64,
    /// Natural-scale generating parameters; the reference truth when absent.
    pub params: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n: 1200,
            frac_mz: 1.0 / 3.0,
            frac_male: 0.5,
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub data: Option<PathBuf>,
    pub components: usize,
    /// `auto`, `truth`, `moments`, `fit`, or a path to a parameter JSON file.
    pub start: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            data: None,
            components: 3,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Base,
    Seedloop,
    Fixed,
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub strategy: StrategyKind,
    pub iters: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seeds: usize,
    /// Parameter blocks held fixed by the `fixed` strategy.
    pub fix: Vec<String>,
    /// Box for the `bounded` strategy; the default sampling box when absent.
    pub bounds: Option<PathBuf>,
    /// Existing chain (JSON) to restart from instead of sampling.
    pub chain: Option<PathBuf>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            strategy: StrategyKind::Base,
            iters: 1000,
            warmup: 500,
            target_accept: 0.95,
            max_depth: 10,
            seeds: 15,
            fix: vec!["alpha".to_string()],
            bounds: None,
            chain: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Run directory to tabulate; the output directory when absent.
    pub dir: Option<PathBuf>,
    /// Include the reference truth row in the global-quantities table.
    pub truth: bool,
}

/// What every command writes next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub derived_seeds: Vec<(String, u64)>,
}

/// Reads a config file. A manifest from an earlier run is accepted too; its
/// resolved config is used.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let inner = match value.get("config") {
        Some(c) if value.get("command").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}
