//! Experiment plumbing behind the `stage` binary: configuration, stable-set
//! and path files, metric tables, adjacency matrices and the subcommands.
//!
//! Output files are named after the scene and method and written below the
//! configured output directory. Each one carries the resolved configuration,
//! either inline (path and tree files, CSV and PPM header comments) or in a
//! sidecar `.meta.json` for the stable set, whose JSONL holds exactly one
//! state per line.

mod adjacency;
mod commands;
mod io;

use std::path::{Path as FsPath, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineConfig, BaselineError, Method, PredictiveSamplingConfig, Sweep};
use crate::metrics::EntropySettings;
use crate::physics::SceneSpec;
use crate::planner::{PlannerConfig, PlannerError};
use crate::stability::{SamplerSettings, StabilityError};

pub use adjacency::{heatmap_ppm, AdjacencyMatrix};
pub use commands::{ablate, adjacency_from_files, evaluate, plan, sample_stable, PlanSummary};
pub use io::{
    read_metrics_csv, read_paths, read_stable, write_metrics_csv, MetricsRow, MetricsTable, PathsFile, RunMeta,
    TreeFile,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("path references stable id {0}, which is not in the stable set")]
    UnknownGoalId(usize),
    #[error("stable-state sampling exhausted: {0}")]
    Exhausted(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl HarnessError {
    /// Process exit code: 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::UnknownGoalId(_) | HarnessError::Parse { .. } => 1,
            HarnessError::Exhausted(_) | HarnessError::Runtime(_) | HarnessError::Io { .. } => 2,
        }
    }
}

impl From<StabilityError> for HarnessError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Exhausted(_) => HarnessError::Exhausted(e.to_string()),
            StabilityError::DimensionMismatch(_) => HarnessError::Validation(e.to_string()),
            e => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<PlannerError> for HarnessError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::InvalidConfig(_) => HarnessError::Validation(e.to_string()),
            e => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<BaselineError> for HarnessError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Planner(p) => p.into(),
            BaselineError::InvalidConfig(_) => HarnessError::Validation(e.to_string()),
        }
    }
}

/// A built-in scene by name or a full inline description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneRef {
    Name(String),
    Inline { name: String, spec: Box<SceneSpec> },
}

impl Default for SceneRef {
    fn default() -> Self {
        SceneRef::Name("spheres_ramp".into())
    }
}

impl SceneRef {
    pub fn name(&self) -> &str {
        match self {
            SceneRef::Name(n) | SceneRef::Inline { name: n, .. } => n,
        }
    }

    pub fn resolve(&self) -> Result<SceneSpec, HarnessError> {
        let spec = match self {
            SceneRef::Name(n) => SceneSpec::builtin(n).ok_or_else(|| {
                HarnessError::Validation(format!(
                    "unknown scene `{n}`, expected one of {}",
                    crate::physics::BUILTIN_SCENES.join(", ")
                ))
            })?,
            SceneRef::Inline { spec, .. } => (**spec).clone(),
        };
        spec.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
        Ok(spec)
    }
}

/// Which files a run writes besides the stable set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Emit {
    pub paths: bool,
    pub tree: bool,
    pub metrics: bool,
    pub adjacency: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self { paths: true, tree: false, metrics: true, adjacency: true }
    }
}

/// Everything a subcommand needs, loadable from JSON and overridable by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneRef,
    pub method: Method,
    /// RRT-sim goal bias.
    pub goal_bias: f64,
    pub predictive_sampling: PredictiveSamplingConfig,
    pub planner: PlannerConfig,
    /// Size of the stable set.
    pub m: usize,
    pub stable_seed: u64,
    pub sampler: SamplerSettings,
    /// Stable-set file relative to the output directory; a name derived from
    /// the scene, `m` and `stable_seed` when absent.
    pub stable_file: Option<String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub emit: Emit,
    pub sweeps: Vec<Sweep>,
    pub entropy: EntropySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneRef::default(),
            method: Method::Stage,
            goal_bias: 0.2,
            predictive_sampling: PredictiveSamplingConfig::default(),
            planner: PlannerConfig::default(),
            m: 26,
            stable_seed: 0,
            sampler: SamplerSettings::default(),
            stable_file: None,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("out"),
            emit: Emit::default(),
            sweeps: Vec::new(),
            entropy: EntropySettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a configuration document. The metadata file written next to run
    /// outputs is accepted too, in which case its embedded configuration is used.
    pub fn load(path: &FsPath) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        let direct = serde_json::from_str::<Self>(&text);
        direct.or_else(|e| {
            serde_json::from_str::<RunMeta>(&text)
                .map(|m| m.config)
                .map_err(|_| HarnessError::Parse { path: path.into(), message: e.to_string() })
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scene.resolve()?;
        if self.m == 0 {
            return Err(HarnessError::Validation("m must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Validation("seed list is empty".into()));
        }
        if self.sampler.max_attempts_per_state == 0 {
            return Err(HarnessError::Validation("max_attempts_per_state must be positive".into()));
        }
        if self.planner.n_max == 0 {
            return Err(HarnessError::Validation("n_max must be positive".into()));
        }
        self.planner.validate()?;
        self.baseline().validate()?;
        Ok(())
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig { method: self.method, goal_bias: self.goal_bias, predictive_sampling: self.predictive_sampling }
    }

    /// Planner configuration of one seed with the stable set cut to `m`.
    pub fn planner_for(&self, seed: u64) -> PlannerConfig {
        PlannerConfig { m: Some(self.m), seed, ..self.planner.clone() }
    }

    pub fn scene_name(&self) -> &str {
        self.scene.name()
    }

    /// Stable-set size a command needs: `m`, or the largest swept size.
    pub fn stable_count(&self) -> usize {
        self.sweeps
            .iter()
            .filter_map(|s| match s {
                Sweep::StableCount(v) => v.iter().max().copied(),
                _ => None,
            })
            .fold(self.m, usize::max)
    }

    pub fn stable_path(&self) -> PathBuf {
        let name = self.stable_file.clone().unwrap_or_else(|| {
            format!("{}_stable_m{}_s{}.jsonl", self.scene_name(), self.stable_count(), self.stable_seed)
        });
        self.output_dir.join(name)
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"))).collect()
}

/// Command-line overrides of [`ExperimentConfig`] fields.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// JSON configuration document; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scene name.
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub goal_bias: Option<f64>,
    /// Number of stable states.
    #[arg(long)]
    pub m: Option<usize>,
    /// Expansion budget.
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub d_min: Option<f64>,
    /// Comma-separated seeds or a half-open range such as `0..10`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub stable_seed: Option<u64>,
    #[arg(long)]
    pub stable_file: Option<String>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Write the search tree of every seed.
    #[arg(long)]
    pub emit_tree: bool,
    #[arg(long)]
    pub no_paths: bool,
    #[arg(long)]
    pub no_adjacency: bool,
}

impl ConfigOverrides {
    /// Loads `--config` when given, applies the flags and validates.
    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scene {
            c.scene = SceneRef::Name(s.clone());
        }
        if let Some(m) = self.method {
            c.method = m;
        }
        if let Some(g) = self.goal_bias {
            c.goal_bias = g;
        }
        if let Some(m) = self.m {
            c.m = m;
        }
        if let Some(v) = self.n_max {
            c.planner.n_max = v;
        }
        if let Some(v) = self.k {
            c.planner.k = v;
        }
        if let Some(v) = self.n {
            c.planner.n = v;
        }
        if let Some(v) = self.epsilon {
            c.planner.epsilon = Some(v);
        }
        if let Some(v) = self.d_min {
            c.planner.d_min = Some(v);
        }
        if let Some(v) = &self.seeds {
            c.seeds = parse_seeds(v).map_err(|e| HarnessError::Validation(format!("bad seed list: {e}")))?;
        }
        if let Some(v) = self.stable_seed {
            c.stable_seed = v;
        }
        if let Some(v) = &self.stable_file {
            c.stable_file = Some(v.clone());
        }
        if let Some(v) = self.max_attempts {
            c.sampler.max_attempts_per_state = v;
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        c.emit.tree |= self.emit_tree;
        c.emit.paths &= !self.no_paths;
        c.emit.adjacency &= !self.no_adjacency;
        c.validate()?;
        Ok(c)
    }
}
