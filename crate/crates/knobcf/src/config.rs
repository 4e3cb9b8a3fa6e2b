//! Run configuration files. Relative paths are resolved against the
//! directory holding the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use knobcf_core::gmm::{DEFAULT_TAU, MAX_WIDTH};
use knobcf_core::knob::KnobSpace;
use knobcf_core::plan::{generate_synthetic_workload, Workload};
use knobcf_core::sim::{standard_space, EvaluationBackend, Simulator};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::external::{CommandBackend, Paced};
use crate::formats::{self, config_hash, FormatError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("{path}: referenced file {file} does not exist")]
    Missing { path: PathBuf, file: PathBuf },
    #[error(transparent)]
    Backend(#[from] knobcf_core::sim::BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum WorkloadSource {
    /// Plan file per query id.
    Plans(BTreeMap<String, PathBuf>),
    /// Generated plans with ids `q00, q01, ...`.
    Synthetic { seed: u64, queries: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSource {
    Simulator(PathBuf),
    /// Program and fixed arguments.
    Command(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TunerChoice {
    Bo,
    /// BO with local candidates and a per-dimension GP.
    #[serde(rename = "bo-refined")]
    #[value(name = "bo-refined")]
    BoRefined,
    Random,
}

impl TunerChoice {
    pub fn name(self) -> &'static str {
        match self {
            TunerChoice::Bo => "bo",
            TunerChoice::BoRefined => "bo-refined",
            TunerChoice::Random => "random",
        }
    }
}

fn default_tuner() -> TunerChoice {
    TunerChoice::Bo
}
fn default_n() -> usize {
    16
}
fn default_init() -> usize {
    knobcf_core::tuner::DEFAULT_INIT_COUNT
}
fn default_iterations() -> usize {
    knobcf_core::orchestrator::DEFAULT_ITERATIONS
}
fn default_m_min() -> usize {
    knobcf_core::classifier::DEFAULT_M_MIN
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_f() -> usize {
    knobcf_core::classifier::DEFAULT_FINETUNE_ITERATIONS
}
fn default_task() -> String {
    "task".into()
}
fn default_samples() -> usize {
    300
}
fn default_p90_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_task")]
    pub task: String,
    /// `None` selects the built-in standard knob space.
    #[serde(default)]
    pub knob_space: Option<PathBuf>,
    pub workload: WorkloadSource,
    pub backend: BackendSource,
    #[serde(default = "default_tuner")]
    pub tuner: TunerChoice,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_init")]
    pub init_count: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_m_min")]
    pub m_min: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Judge-off iterations before fine-tuning; 0 disables fine-tuning.
    #[serde(default = "default_f")]
    pub f: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// LHS evaluations collected when this task is used for pretraining.
    #[serde(default = "default_samples")]
    pub pretrain_samples: usize,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    /// Multiplier from simulated to real seconds; 0 runs as fast as possible.
    #[serde(default)]
    pub time_scale: f64,
    /// Counts measured prediction overhead in iteration times. Off keeps
    /// logs byte-reproducible.
    #[serde(default)]
    pub measure_overhead: bool,
    #[serde(default = "default_p90_repeats")]
    pub p90_repeats: usize,
}

/// A run configuration together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub base: PathBuf,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason,
        };
        if !(1..=MAX_WIDTH).contains(&self.n) {
            return Err(bad(format!("n = {} must be in [1, {MAX_WIDTH}]", self.n)));
        }
        if self.init_count == 0 {
            return Err(bad("init_count must be at least 1".into()));
        }
        if self.m_min == 0 {
            return Err(bad("m_min must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(bad(format!("tau = {} must be in (0, 1]", self.tau)));
        }
        if !(self.time_scale >= 0.0 && self.time_scale.is_finite()) {
            return Err(bad(format!("time_scale = {} must be finite and non-negative", self.time_scale)));
        }
        if self.p90_repeats < 2 {
            return Err(bad("p90_repeats must be at least 2".into()));
        }
        if self.task.is_empty() {
            return Err(bad("task must be non-empty".into()));
        }
        match &self.workload {
            WorkloadSource::Synthetic { queries: 0, .. } => return Err(bad("synthetic workload needs at least 1 query".into())),
            WorkloadSource::Plans(p) if p.is_empty() => return Err(bad("workload has no plans".into())),
            _ => {}
        }
        if let BackendSource::Command(c) = &self.backend {
            if c.is_empty() {
                return Err(bad("backend command is empty".into()));
            }
        }
        Ok(())
    }

    /// Files this configuration reads, as written.
    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = Vec::new();
        out.extend(self.knob_space.as_deref());
        if let WorkloadSource::Plans(p) = &self.workload {
            out.extend(p.values().map(PathBuf::as_path));
        }
        if let BackendSource::Simulator(s) = &self.backend {
            out.push(s);
        }
        out
    }
}

pub fn load_run_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let config: RunConfig = formats::read_json(path)?;
    config.validate(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedConfig {
        path: path.to_path_buf(),
        base,
        config,
    };
    for file in loaded.config.referenced_files() {
        let resolved = loaded.resolve(file);
        if !resolved.is_file() {
            return Err(ConfigError::Missing {
                path: path.to_path_buf(),
                file: resolved,
            });
        }
    }
    Ok(loaded)
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Hash of the effective configuration (output directory excluded) and
    /// the contents of every file it references.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let mut canonical = self.config.clone();
        canonical.output_dir = None;
        let mut bytes = serde_json::to_vec(&canonical).map_err(|e| ConfigError::Invalid {
            path: self.path.clone(),
            reason: e.to_string(),
        })?;
        for file in self.config.referenced_files() {
            let resolved = self.resolve(file);
            let content = std::fs::read(&resolved).map_err(|source| FormatError::Io { path: resolved.clone(), source })?;
            bytes.extend_from_slice(config_hash(&content).as_bytes());
        }
        Ok(config_hash(&bytes))
    }

    pub fn knob_space(&self) -> Result<KnobSpace, ConfigError> {
        match &self.config.knob_space {
            Some(p) => Ok(formats::read_knob_space(&self.resolve(p))?),
            None => Ok(standard_space()),
        }
    }

    pub fn workload(&self) -> Result<Workload, ConfigError> {
        match &self.config.workload {
            WorkloadSource::Plans(plans) => {
                let resolved = plans.iter().map(|(id, p)| (id.clone(), self.resolve(p))).collect();
                Ok(formats::read_workload(&resolved)?)
            }
            WorkloadSource::Synthetic { seed, queries } => Ok(generate_synthetic_workload(*seed, *queries, 2..=3, 1..=2)),
        }
    }

    /// Builds the evaluation backend; `scratch` holds files exchanged with
    /// external commands.
    pub fn backend(&self, space: &KnobSpace, scratch: &Path) -> Result<Box<dyn EvaluationBackend + Send + Sync>, ConfigError> {
        match &self.config.backend {
            BackendSource::Simulator(p) => {
                let spec = formats::read_simulator_spec(&self.resolve(p))?;
                let sim = Simulator::new(spec, space.clone())?.with_time_scale(self.config.time_scale);
                if self.config.time_scale > 0.0 {
                    Ok(Box::new(Paced(sim)))
                } else {
                    Ok(Box::new(sim))
                }
            }
            BackendSource::Command(cmd) => Ok(Box::new(CommandBackend::new(cmd, space.clone(), scratch)?)),
        }
    }
}
