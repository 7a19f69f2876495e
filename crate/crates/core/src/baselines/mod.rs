//! Comparison methods: the planner's ablations, kinodynamic RRT with goal
//! bias (RRT-sim) and receding-horizon predictive sampling.
//!
//! RRT-sim and every ablation are the main planner run with a configuration
//! delta, so they share one code path.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{EntropySettings, MetricsReport};
use crate::physics::{self, ActionCommand, SceneSpec, SystemState};
use crate::planner::{distance_unchecked, draw_root, plan, BuildStats, Path, PlanOutcome, PlannerConfig, PlannerError, Weights};
use crate::rng::{indexed_stream, Purpose};
use crate::stability::StableState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("invalid baseline configuration: {0}")]
    InvalidConfig(String),
}

/// A planning method: the full planner, one of its ablations, or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "stage")]
    Stage,
    #[serde(rename = "no_rejection")]
    NoRejection,
    #[serde(rename = "no_nbest")]
    NoNBest,
    #[serde(rename = "no_knn")]
    NoKnn,
    #[serde(rename = "uniform80")]
    Uniform80,
    #[serde(rename = "rrt_sim")]
    RrtSim,
    #[serde(rename = "predictive_sampling")]
    PredictiveSampling,
}

/// The five planner variants of the ablation grid.
pub const ABLATION_VARIANTS: [Method; 5] =
    [Method::Stage, Method::NoRejection, Method::NoNBest, Method::NoKnn, Method::Uniform80];

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Stage,
        Method::NoRejection,
        Method::NoNBest,
        Method::NoKnn,
        Method::Uniform80,
        Method::RrtSim,
        Method::PredictiveSampling,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Stage => "stage",
            Method::NoRejection => "no_rejection",
            Method::NoNBest => "no_nbest",
            Method::NoKnn => "no_knn",
            Method::Uniform80 => "uniform80",
            Method::RrtSim => "rrt_sim",
            Method::PredictiveSampling => "predictive_sampling",
        }
    }

    /// Planner configuration of a tree-based method; `None` for predictive sampling.
    pub fn planner_config(&self, base: &PlannerConfig, goal_bias: f64) -> Option<PlannerConfig> {
        let c = base.clone();
        Some(match self {
            Method::Stage => c,
            Method::NoRejection => PlannerConfig { node_rejection: false, ..c },
            Method::NoNBest => PlannerConfig { n: 1, ..c },
            Method::NoKnn => PlannerConfig { k: 1, ..c },
            Method::Uniform80 => PlannerConfig { stable_sample_prob: 0.2, ..c },
            Method::RrtSim => rrt_sim_config(base, goal_bias),
            Method::PredictiveSampling => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            format!("unknown method `{s}`, expected one of {}", names.join(", "))
        })
    }
}

/// Settings of the receding-horizon predictive-sampling controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictiveSamplingConfig {
    /// Actions per nominal plan.
    pub horizon: usize,
    /// Plan improvement rounds per control step.
    pub iterations: usize,
    /// Rollouts per improvement round, the unperturbed plan included.
    pub samples: usize,
    /// Perturbation standard deviation as a fraction of each robot's speed limit.
    pub noise: f64,
}

impl Default for PredictiveSamplingConfig {
    fn default() -> Self {
        Self { horizon: 8, iterations: 1, samples: 32, noise: 0.1 }
    }
}

impl PredictiveSamplingConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.horizon == 0 || self.iterations == 0 || self.samples == 0 {
            return Err(BaselineError::InvalidConfig("horizon, iterations and samples must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(BaselineError::InvalidConfig("noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Method selection and baseline parameters of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: Method,
    /// Probability of drawing an RRT-sim target from the stable set.
    pub goal_bias: f64,
    pub predictive_sampling: PredictiveSamplingConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { method: Method::Stage, goal_bias: 0.2, predictive_sampling: PredictiveSamplingConfig::default() }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(BaselineError::InvalidConfig("goal_bias must lie in [0, 1]".into()));
        }
        self.predictive_sampling.validate()
    }
}

/// RRT-sim as a planner configuration: single nearest node, single best
/// action, no node rejection and stable targets drawn with `goal_bias`.
pub fn rrt_sim_config(base: &PlannerConfig, goal_bias: f64) -> PlannerConfig {
    PlannerConfig { k: 1, n: 1, node_rejection: false, stable_sample_prob: goal_bias, ..base.clone() }
}

/// Runs RRT-sim and evaluates it like the planner.
pub fn run_rrt_sim(
    base: &PlannerConfig,
    goal_bias: f64,
    stable: &[StableState],
    scene: &SceneSpec,
) -> Result<(PlanOutcome, MetricsReport), BaselineError> {
    if !(0.0..=1.0).contains(&goal_bias) {
        return Err(BaselineError::InvalidConfig("goal_bias must lie in [0, 1]".into()));
    }
    let config = rrt_sim_config(base, goal_bias);
    let outcome = plan(&config, stable, scene)?;
    let report = MetricsReport::from_outcome(
        &outcome,
        config.stable_subset(stable),
        &config.weights,
        &EntropySettings::default(),
        config.seed,
    );
    Ok((outcome, report))
}

/// Simulator steps a planner run is allowed: every candidate of every iteration.
pub fn planner_sim_budget(config: &PlannerConfig, scene: &SceneSpec) -> Result<u64, BaselineError> {
    let substeps = ActionCommand::zero(scene.robots.len(), config.action_duration)
        .substeps(scene.dt)
        .map_err(|e| BaselineError::Planner(e.into()))?;
    Ok((config.n_max * config.n_candidates * substeps) as u64)
}

/// Result of one predictive-sampling attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct PsOutcome {
    pub success: bool,
    /// Executed trajectory; ends within `epsilon` of the goal on success.
    pub path: Path,
    pub sim_steps: u64,
    /// Metric distance of the last executed state to the goal.
    pub final_distance: f64,
}

fn perturb<R: Rng + ?Sized>(plan: &[ActionCommand], scene: &SceneSpec, noise: f64, rng: &mut R) -> Vec<ActionCommand> {
    plan.iter()
        .map(|a| {
            let robot_target_vel = a
                .robot_target_vel
                .iter()
                .zip(&scene.robots)
                .map(|(v, r)| {
                    let normal = Normal::new(0.0, noise * r.max_speed).expect("finite noise");
                    v + nalgebra::Vector3::from_fn(|_, _| normal.sample(rng))
                })
                .collect();
            ActionCommand { robot_target_vel, duration: a.duration }.clamped(scene)
        })
        .collect()
}

/// Drives the system from `start` towards `goal` with sampling-based MPC:
/// each control step rolls out the nominal plan and Gaussian perturbations of
/// it, keeps the plan whose final state is nearest the goal and executes its
/// first action. Stops on reaching the goal radius or when the next control
/// step would exceed `budget_steps` simulator steps.
#[allow(clippy::too_many_arguments)]
pub fn run_predictive_sampling<R: Rng + ?Sized>(
    config: &PredictiveSamplingConfig,
    start: &StableState,
    goal: &StableState,
    scene: &SceneSpec,
    epsilon: f64,
    weights: &Weights,
    action_duration: f64,
    budget_steps: u64,
    rng: &mut R,
) -> Result<PsOutcome, BaselineError> {
    config.validate()?;
    let n_robots = scene.robots.len();
    let substeps = ActionCommand::zero(n_robots, action_duration)
        .substeps(scene.dt)
        .map_err(|e| BaselineError::Planner(e.into()))? as u64;
    let dist = |s: &SystemState| distance_unchecked(s, &goal.config, weights);
    let mut state = start.config.clone();
    let mut path = Path {
        start_id: start.id,
        goal_id: goal.id,
        terminal_distance: dist(&state).sqrt(),
        node_ids: vec![],
        states: vec![state.clone()],
        actions: vec![],
    };
    let mut nominal = vec![ActionCommand::zero(n_robots, action_duration); config.horizon];
    let round_cost = config.samples as u64 * config.horizon as u64 * substeps;
    let step_cost = config.iterations as u64 * round_cost + substeps;
    let mut used = 0u64;
    let mut success = path.terminal_distance < epsilon;
    while !success && used + step_cost <= budget_steps {
        for _ in 0..config.iterations {
            let mut plans = vec![nominal.clone()];
            plans.extend((1..config.samples).map(|_| perturb(&nominal, scene, config.noise, rng)));
            let costs: Vec<f64> = plans
                .par_iter()
                .map(|p| match physics::rollout(&state, p, scene) {
                    Ok(states) => dist(states.last().expect("non-empty plan")),
                    Err(_) => f64::INFINITY,
                })
                .collect();
            used += round_cost;
            let best = (0..plans.len()).min_by(|a, b| costs[*a].total_cmp(&costs[*b]).then(a.cmp(b))).expect("samples > 0");
            nominal = plans.swap_remove(best);
        }
        let action = nominal[0].clone();
        used += substeps;
        state = match physics::step(&state, &action, scene) {
            Ok(s) => s,
            Err(physics::PhysicsError::Diverged) => break,
            Err(e) => return Err(BaselineError::Planner(e.into())),
        };
        nominal.rotate_left(1);
        let last = nominal.len() - 1;
        nominal[last] = nominal[last.saturating_sub(1)].clone();
        path.terminal_distance = dist(&state).sqrt();
        path.states.push(state.clone());
        path.actions.push(action);
        success = path.terminal_distance < epsilon;
    }
    let final_distance = path.terminal_distance;
    Ok(PsOutcome { success, path, sim_steps: used, final_distance })
}

/// Predictive sampling from the seed's root to every other stable state, each
/// pair with an equal share of one planner run's simulator budget. Coverage is
/// the percentage of goals reached; the successful trajectories are the paths.
pub fn run_predictive_sampling_all(
    config: &PredictiveSamplingConfig,
    planner: &PlannerConfig,
    stable: &[StableState],
    scene: &SceneSpec,
) -> Result<(Vec<PsOutcome>, MetricsReport), BaselineError> {
    planner.validate()?;
    let stable = planner.stable_subset(stable);
    if stable.len() < 2 {
        return Err(BaselineError::InvalidConfig("predictive sampling needs at least two stable states".into()));
    }
    let root = draw_root(stable, planner.seed);
    let epsilon = planner.epsilon_for(scene);
    let per_pair = planner_sim_budget(planner, scene)? / (stable.len() as u64 - 1);
    let mut outcomes = Vec::with_capacity(stable.len() - 1);
    for (i, goal) in stable.iter().enumerate().filter(|(i, _)| *i != root) {
        let mut rng = indexed_stream(planner.seed, Purpose::Actions, i as u64);
        outcomes.push(run_predictive_sampling(
            config,
            &stable[root],
            goal,
            scene,
            epsilon,
            &planner.weights,
            planner.action_duration,
            per_pair,
            &mut rng,
        )?);
    }
    let reached: Vec<Path> = outcomes.iter().filter(|o| o.success).map(|o| o.path.clone()).collect();
    let coverage = 100.0 * reached.len() as f64 / outcomes.len() as f64;
    let report = MetricsReport::from_paths(&reached, coverage, &planner.weights, &EntropySettings::default(), planner.seed);
    Ok((outcomes, report))
}

/// A swept planner parameter of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    N(Vec<usize>),
    K(Vec<usize>),
    StableCount(Vec<usize>),
}

/// One (configuration, seed) cell of the grid.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub label: String,
    pub seed: u64,
    pub config: PlannerConfig,
    pub report: MetricsReport,
    pub stats: BuildStats,
    pub paths: Vec<Path>,
}

fn grid_configs(base: &PlannerConfig, sweeps: &[Sweep]) -> Vec<(String, PlannerConfig)> {
    let mut out: Vec<(String, PlannerConfig)> = ABLATION_VARIANTS
        .iter()
        .map(|m| (m.name().to_string(), m.planner_config(base, 0.0).expect("tree method")))
        .collect();
    for sweep in sweeps {
        match sweep {
            Sweep::N(v) => out.extend(v.iter().map(|n| (format!("n={n}"), PlannerConfig { n: *n, ..base.clone() }))),
            Sweep::K(v) => out.extend(v.iter().map(|k| (format!("k={k}"), PlannerConfig { k: *k, ..base.clone() }))),
            Sweep::StableCount(v) => {
                out.extend(v.iter().map(|m| (format!("m={m}"), PlannerConfig { m: Some(*m), ..base.clone() })))
            }
        }
    }
    out
}

/// Runs the five planner variants and the requested sweeps for every seed.
/// Cells are independent and run concurrently; results come back in
/// (configuration, seed) order.
pub fn run_ablation_grid(
    scene: &SceneSpec,
    stable: &[StableState],
    base: &PlannerConfig,
    seeds: &[u64],
    sweeps: &[Sweep],
    entropy: &EntropySettings,
) -> Result<Vec<GridCell>, BaselineError> {
    if seeds.is_empty() {
        return Err(BaselineError::InvalidConfig("seed list is empty".into()));
    }
    let configs = grid_configs(base, sweeps);
    for (label, c) in &configs {
        c.validate()?;
        if c.m.is_some_and(|m| m > stable.len()) {
            return Err(BaselineError::InvalidConfig(format!("{label} needs more than the {} stable states given", stable.len())));
        }
    }
    let cells: Vec<(String, PlannerConfig)> = configs
        .into_iter()
        .flat_map(|(label, c)| seeds.iter().map(move |s| (label.clone(), PlannerConfig { seed: *s, ..c.clone() })))
        .collect();
    cells
        .into_par_iter()
        .map(|(label, config)| {
            let outcome = plan(&config, stable, scene)?;
            let report = MetricsReport::from_outcome(
                &outcome,
                config.stable_subset(stable),
                &config.weights,
                entropy,
                config.seed,
            );
            Ok(GridCell { label, seed: config.seed, report, stats: outcome.stats, paths: outcome.paths, config })
        })
        .collect()
}

#[cfg(test)]
mod tests;
