//! Stability-guided kinodynamic tree search.
//!
//! Each iteration draws a target (a stable state, or with the ablation's
//! probability a uniform configuration), picks one of the `k` tree nodes
//! nearest to it, simulates `n_candidates` random actions from that node and
//! keeps the `n` whose end states come closest to the target. If none of them
//! gets closer to any stable state the node is disabled. Paths are then read
//! off the tree wherever a node lands within `epsilon` of a stable state and
//! thinned per goal with a Hausdorff-distance filter.

mod distance;
mod paths;
mod registry;
mod tree;

pub use distance::{default_epsilon, rotation_angle, scene_diameter, weighted_distance, Weights};
pub use paths::{extract_paths, hausdorff, hausdorff_by, hausdorff_exceeds, remove_redundant, Path};
pub use registry::StableRegistry;
pub use tree::{SearchTree, TreeNode};

pub(crate) use distance::distance_unchecked;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{self, ActionCommand, Pose, SceneSpec, SystemState, DEFAULT_ACTION_DURATION};
use crate::rng::{stream, Purpose};
use crate::stability::{random_rotation, StableState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("states do not have matching dimensions")]
    DimensionMismatch,
    #[error("the tree has no active node")]
    EmptyTree,
    #[error("every candidate action diverged")]
    AllDiverged,
    #[error("path has no states")]
    EmptyPath,
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Physics(#[from] physics::PhysicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Expansion budget (iterations of the main loop).
    pub n_max: usize,
    /// Number of stable states used, taken from the front of the set; all when absent.
    pub m: Option<usize>,
    pub k: usize,
    pub n: usize,
    pub n_candidates: usize,
    /// Goal radius; 5% of the scene diameter when absent.
    pub epsilon: Option<f64>,
    /// Minimal Hausdorff distance between kept paths; `epsilon` when absent.
    pub d_min: Option<f64>,
    pub weights: Weights,
    pub stable_sample_prob: f64,
    pub node_rejection: bool,
    pub progress_tol: f64,
    /// Judge progress against each goal's best recorded distance instead of
    /// the expanded node's own distance.
    pub progress_against_best: bool,
    pub action_duration: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_max: 2500,
            m: None,
            k: 16,
            n: 16,
            n_candidates: 64,
            epsilon: None,
            d_min: None,
            weights: Weights::default(),
            stable_sample_prob: 1.0,
            node_rejection: true,
            progress_tol: 1e-6,
            progress_against_best: false,
            action_duration: DEFAULT_ACTION_DURATION,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.into()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.n < 1 || self.n > self.n_candidates {
            return bad("n must lie in 1..=n_candidates");
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) {
            return bad("epsilon must be positive");
        }
        if self.d_min.is_some_and(|d| !(d > 0.0)) {
            return bad("d_min must be positive");
        }
        if !(0.0..=1.0).contains(&self.stable_sample_prob) {
            return bad("stable_sample_prob must lie in [0, 1]");
        }
        if self.m == Some(0) {
            return bad("m must be at least 1");
        }
        let w = &self.weights;
        if !(w.w_obj >= 0.0 && w.w_rob >= 0.0 && w.w_vel >= 0.0) {
            return bad("weights must be non-negative");
        }
        Ok(())
    }

    pub fn epsilon_for(&self, scene: &SceneSpec) -> f64 {
        self.epsilon.unwrap_or_else(|| default_epsilon(scene, &self.weights))
    }

    pub fn d_min_for(&self, scene: &SceneSpec) -> f64 {
        self.d_min.unwrap_or_else(|| self.epsilon_for(scene))
    }

    /// The stable states the run uses.
    pub fn stable_subset<'a>(&self, stable: &'a [StableState]) -> &'a [StableState] {
        &stable[..self.m.unwrap_or(stable.len()).min(stable.len())]
    }
}

/// An extension target.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Index into the goal registry.
    Stable(usize),
    /// Uniform configuration, not tracked by the registry.
    Uniform(SystemState),
}

/// Draws a stable goal with probability `stable_sample_prob`, otherwise a
/// uniform configuration.
pub fn select_target<R: Rng + ?Sized>(
    registry: &StableRegistry,
    scene: &SceneSpec,
    rng: &mut R,
    stable_sample_prob: f64,
) -> Target {
    if stable_sample_prob >= 1.0 || rng.random::<f64>() < stable_sample_prob {
        Target::Stable(registry.sample(rng))
    } else {
        Target::Uniform(uniform_state(scene, rng))
    }
}

/// Configuration at rest with robots uniform within their limits, objects
/// uniform in the scene extent and boxes uniformly rotated. It need not be
/// collision-free.
pub fn uniform_state<R: Rng + ?Sized>(scene: &SceneSpec, rng: &mut R) -> SystemState {
    let uniform_in = |lo: Vector3<f64>, hi: Vector3<f64>, rng: &mut R| {
        Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]))
    };
    let robots: Vec<_> = scene.robots.iter().map(|r| uniform_in(r.low(), r.high(), rng)).collect();
    let (lo, hi) = scene.extent();
    let poses = scene
        .objects
        .iter()
        .map(|o| {
            let position = uniform_in(lo, hi, rng);
            let orientation = if o.is_sphere() { UnitQuaternion::identity() } else { random_rotation(rng) };
            Pose { position, orientation }
        })
        .collect();
    SystemState::at_rest(&robots, poses)
}

/// Random robot command: per axis Gaussian with standard deviation half the
/// speed limit, scaled back to the limit.
pub fn sample_action<R: Rng + ?Sized>(scene: &SceneSpec, duration: f64, rng: &mut R) -> ActionCommand {
    let robot_target_vel = scene
        .robots
        .iter()
        .map(|r| {
            let normal = Normal::new(0.0, 0.5 * r.max_speed).expect("finite speed limit");
            Vector3::from_fn(|_, _| normal.sample(rng))
        })
        .collect();
    ActionCommand { robot_target_vel, duration }.clamped(scene)
}

/// One simulated candidate of [`optimize_actions`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub action: ActionCommand,
    pub state: SystemState,
    pub distance: f64,
}

/// Simulates `n_candidates` random actions from `from` and returns the `n`
/// non-diverged ones closest to `target`, ties broken by candidate index.
#[allow(clippy::too_many_arguments)]
pub fn optimize_actions<R: Rng + ?Sized>(
    from: &SystemState,
    target: &SystemState,
    n: usize,
    n_candidates: usize,
    duration: f64,
    weights: &Weights,
    scene: &SceneSpec,
    rng: &mut R,
) -> Result<Vec<Candidate>, PlannerError> {
    let actions: Vec<ActionCommand> = (0..n_candidates).map(|_| sample_action(scene, duration, rng)).collect();
    let mut out = simulate_candidates(from, target, actions, weights, scene)?;
    out.truncate(n);
    Ok(out)
}

/// Every non-diverged candidate, sorted by `(distance, index)`.
pub(crate) fn simulate_candidates(
    from: &SystemState,
    target: &SystemState,
    actions: Vec<ActionCommand>,
    weights: &Weights,
    scene: &SceneSpec,
) -> Result<Vec<Candidate>, PlannerError> {
    let results: Vec<Result<SystemState, physics::PhysicsError>> =
        actions.par_iter().map(|a| physics::step(from, a, scene)).collect();
    let mut out = Vec::with_capacity(actions.len());
    for (index, (action, r)) in actions.into_iter().zip(results).enumerate() {
        match r {
            Ok(state) => {
                let distance = distance_unchecked(&state, target, weights);
                out.push(Candidate { index, action, state, distance });
            }
            Err(physics::PhysicsError::Diverged) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if out.is_empty() {
        return Err(PlannerError::AllDiverged);
    }
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    Ok(out)
}

/// Counters of one tree build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub iterations: usize,
    pub expansions: usize,
    pub rejections: usize,
    /// Iterations whose candidates did not reduce any distance while node
    /// rejection was off.
    pub stalls: usize,
    pub all_diverged: usize,
    /// Iterations with no active node to expand.
    pub no_active_node: usize,
    /// Targets redrawn because all of their nearest nodes were disabled.
    pub resampled_targets: usize,
    pub stable_targets: usize,
    pub uniform_targets: usize,
    /// Simulator integration steps spent on candidate rollouts.
    pub sim_steps: u64,
}

/// Uniformly drawn root among `stable` for a seed.
pub fn draw_root(stable: &[StableState], seed: u64) -> usize {
    let mut rng = stream(seed, Purpose::Start);
    rng.random_range(0..stable.len())
}

/// The `k` active nodes nearest to a target, by linear scan.
fn k_nearest_scan(tree: &SearchTree, target: &SystemState, k: usize, w: &Weights) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = tree
        .nodes
        .iter()
        .filter(|n| n.active)
        .map(|n| (distance_unchecked(&n.state, target, w), n.id))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.truncate(k);
    v.into_iter().map(|(_, id)| id).collect()
}

/// Grows a tree from the stable state at index `root` of `stable` for
/// `config.n_max` iterations. The other stable states are the goals.
pub fn build_tree_from(
    config: &PlannerConfig,
    stable: &[StableState],
    root: usize,
    scene: &SceneSpec,
) -> Result<(SearchTree, StableRegistry, BuildStats), PlannerError> {
    config.validate()?;
    if stable.len() < 2 {
        return Err(PlannerError::InvalidConfig("at least two stable states are needed".into()));
    }
    let root_state = &stable[root];
    let mut tree = SearchTree::new(root_state.config.clone(), root_state.id);
    let goals = stable.iter().enumerate().filter(|(i, _)| *i != root).map(|(_, s)| s);
    let mut registry = StableRegistry::new(goals, config.k, config.weights);
    registry.update_knn(0, &tree.nodes[0].state);
    let mut targets = stream(config.seed, Purpose::Targets);
    let mut selection = stream(config.seed, Purpose::Selection);
    let mut actions = stream(config.seed, Purpose::Actions);
    let substeps = ActionCommand::zero(scene.robots.len(), config.action_duration).substeps(scene.dt)? as u64;
    let mut stats = BuildStats::default();
    let w = config.weights;
    for _ in 0..config.n_max {
        stats.iterations += 1;
        let mut target = select_target(&registry, scene, &mut targets, config.stable_sample_prob);
        let mut near = match &target {
            Target::Stable(g) => registry.k_nearest(*g, &tree),
            Target::Uniform(s) => k_nearest_scan(&tree, s, config.k, &w),
        };
        let mut redraws = 0;
        while near.is_empty() && redraws < 2 * registry.len() {
            redraws += 1;
            stats.resampled_targets += 1;
            target = select_target(&registry, scene, &mut targets, config.stable_sample_prob);
            near = match &target {
                Target::Stable(g) => registry.k_nearest(*g, &tree),
                Target::Uniform(s) => k_nearest_scan(&tree, s, config.k, &w),
            };
        }
        let target_state = match &target {
            Target::Stable(g) => {
                stats.stable_targets += 1;
                registry.state(*g).clone()
            }
            Target::Uniform(s) => {
                stats.uniform_targets += 1;
                s.clone()
            }
        };
        if near.is_empty() {
            near = k_nearest_scan(&tree, &target_state, config.k, &w);
        }
        if near.is_empty() {
            stats.no_active_node += 1;
            continue;
        }
        let x_near = near[selection.random_range(0..near.len())];
        let from = tree.nodes[x_near].state.clone();
        stats.sim_steps += substeps * config.n_candidates as u64;
        let best = match optimize_actions(
            &from,
            &target_state,
            config.n,
            config.n_candidates,
            config.action_duration,
            &w,
            scene,
            &mut actions,
        ) {
            Ok(c) => c,
            Err(PlannerError::AllDiverged) => {
                stats.all_diverged += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let ends: Vec<&SystemState> = best.iter().map(|c| &c.state).collect();
        if registry.reduces_distance(&ends, &from, config.progress_tol, config.progress_against_best) {
            stats.expansions += 1;
            for c in best {
                let id = tree.insert(x_near, c.action, c.state);
                registry.update_knn(id, &tree.nodes[id].state);
            }
        } else if config.node_rejection {
            stats.rejections += 1;
            tree.disable(x_near);
        } else {
            stats.stalls += 1;
        }
    }
    Ok((tree, registry, stats))
}

/// [`build_tree_from`] with the root drawn from the seed.
pub fn build_tree(
    config: &PlannerConfig,
    stable: &[StableState],
    scene: &SceneSpec,
) -> Result<(SearchTree, StableRegistry, BuildStats), PlannerError> {
    let stable = config.stable_subset(stable);
    if stable.is_empty() {
        return Err(PlannerError::InvalidConfig("empty stable set".into()));
    }
    build_tree_from(config, stable, draw_root(stable, config.seed), scene)
}

/// Result of a full planner run.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub tree: SearchTree,
    pub registry: StableRegistry,
    pub stats: BuildStats,
    /// Paths before the redundancy filter.
    pub candidate_paths: usize,
    pub paths: Vec<Path>,
    pub epsilon: f64,
    pub d_min: f64,
}

/// Tree construction, path extraction and redundancy filtering.
pub fn plan(config: &PlannerConfig, stable: &[StableState], scene: &SceneSpec) -> Result<PlanOutcome, PlannerError> {
    let (tree, registry, stats) = build_tree(config, stable, scene)?;
    let epsilon = config.epsilon_for(scene);
    let d_min = config.d_min_for(scene);
    let raw = extract_paths(&tree, config.stable_subset(stable), epsilon, &config.weights);
    let candidate_paths = raw.len();
    let mut shuffle = stream(config.seed, Purpose::Shuffle);
    let paths = remove_redundant(raw, d_min, &config.weights, &mut shuffle);
    Ok(PlanOutcome { tree, registry, stats, candidate_paths, paths, epsilon, d_min })
}

#[cfg(test)]
mod tests;
