//! Evaluation metrics over planner output: path count, coverage of the stable
//! set, Kozachenko–Leonenko entropy of the visited states and the average
//! Hausdorff distance between paths sharing a goal.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::physics::SystemState;
use crate::planner::{distance_unchecked, hausdorff_by, Path, PlanOutcome, SearchTree, StableRegistry, Weights};
use crate::rng::{stream, Purpose};
use crate::stability::StableState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} states, got {got}")]
    InsufficientStates { needed: usize, got: usize },
    #[error("sample contains a point whose k-th neighbor is at distance zero")]
    DegenerateSample,
    #[error("invalid entropy settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropySettings {
    pub sample_n: usize,
    pub k: usize,
    pub repeats: usize,
}

impl Default for EntropySettings {
    fn default() -> Self {
        Self { sample_n: 100, k: 10, repeats: 10 }
    }
}

/// Percentage of goals (stable states other than the root) within `epsilon`
/// of at least one tree node.
pub fn coverage_from_tree(tree: &SearchTree, stable: &[StableState], epsilon: f64, w: &Weights) -> f64 {
    let goals: Vec<_> = stable.iter().filter(|s| s.id != tree.root_id).collect();
    let reached = goals
        .iter()
        .filter(|g| tree.nodes.iter().any(|n| distance_unchecked(&n.state, &g.config, w).sqrt() < epsilon))
        .count();
    percentage(reached, goals.len())
}

/// Coverage read from the per-goal best distances kept during tree growth.
pub fn coverage_from_registry(registry: &StableRegistry, epsilon: f64) -> f64 {
    let reached = registry.best_distance().iter().filter(|d| d.sqrt() < epsilon).count();
    percentage(reached, registry.len())
}

fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Natural log of the volume of the unit ball in `d` dimensions.
pub fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

/// Kozachenko–Leonenko entropy estimate in nats of points in a
/// `dim`-dimensional space with metric `dist`, averaged over repeated
/// subsamples of `settings.sample_n` points drawn without replacement.
pub fn kl_entropy_by<T, R: Rng + ?Sized>(
    pool: &[T],
    dim: usize,
    dist: impl Fn(&T, &T) -> f64,
    settings: &EntropySettings,
    rng: &mut R,
) -> Result<f64, MetricsError> {
    let EntropySettings { sample_n, k, repeats } = *settings;
    if k == 0 || repeats == 0 || sample_n <= k {
        return Err(MetricsError::InvalidSettings(format!("need 0 < k < sample_n and repeats > 0, got {settings:?}")));
    }
    if pool.len() < sample_n {
        return Err(MetricsError::InsufficientStates { needed: sample_n, got: pool.len() });
    }
    let n = sample_n as f64;
    let constant = digamma(n) - digamma(k as f64) + log_unit_ball_volume(dim);
    let mut total = 0.0;
    for _ in 0..repeats {
        let idx = sample(rng, pool.len(), sample_n).into_vec();
        let mut log_sum = 0.0;
        let mut row = Vec::with_capacity(sample_n - 1);
        for &i in &idx {
            row.clear();
            row.extend(idx.iter().filter(|&&j| j != i).map(|&j| dist(&pool[i], &pool[j])));
            let (_, kth, _) = row.select_nth_unstable_by(k - 1, f64::total_cmp);
            if !(*kth > 0.0) {
                return Err(MetricsError::DegenerateSample);
            }
            log_sum += kth.ln();
        }
        total += constant + dim as f64 * log_sum / n;
    }
    Ok(total / repeats as f64)
}

/// Degrees of freedom of a state: robot positions and velocities plus six
/// pose and six velocity coordinates per object.
pub fn state_dimension(s: &SystemState) -> usize {
    s.robot_q.len() + s.robot_v.len() + 12 * s.object_poses.len()
}

/// [`kl_entropy_by`] over system states under the square root of the planner metric.
pub fn kl_entropy<R: Rng + ?Sized>(
    states: &[SystemState],
    w: &Weights,
    settings: &EntropySettings,
    rng: &mut R,
) -> Result<f64, MetricsError> {
    let dim = states.first().map_or(0, state_dimension);
    kl_entropy_by(states, dim, |a, b| distance_unchecked(a, b, w).sqrt(), settings, rng)
}

/// Distinct states along `paths`, in order of first appearance.
pub fn visited_states(paths: &[Path]) -> Vec<SystemState> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .flat_map(|p| &p.states)
        .filter(|s| seen.insert(s.scalars().map(f64::to_bits).collect::<Vec<_>>()))
        .cloned()
        .collect()
}

/// Mean over goals with at least two paths of the mean pairwise Hausdorff
/// distance between those paths. `None` when no goal has two paths.
pub fn avg_hausdorff(paths: &[Path], w: &Weights) -> Option<f64> {
    let mut groups: BTreeMap<usize, Vec<&Path>> = BTreeMap::new();
    for p in paths {
        groups.entry(p.goal_id).or_default().push(p);
    }
    let d = |a: &SystemState, b: &SystemState| distance_unchecked(a, b, w).sqrt();
    let means: Vec<f64> = groups
        .values()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for (i, p) in g.iter().enumerate() {
                for q in &g[i + 1..] {
                    sum += hausdorff_by(&p.states, &q.states, d);
                    pairs += 1;
                }
            }
            sum / pairs as f64
        })
        .collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// The four evaluation metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub path_count: usize,
    pub coverage_pct: f64,
    pub entropy_nats: Option<f64>,
    pub avg_hausdorff: Option<f64>,
    pub notes: Vec<String>,
}

impl MetricsReport {
    /// Metrics of a set of retained paths and a coverage value computed elsewhere.
    pub fn from_paths(paths: &[Path], coverage_pct: f64, w: &Weights, entropy: &EntropySettings, seed: u64) -> Self {
        let mut notes = vec!["entropy distances use the square root of the weighted state metric".to_string()];
        let pool = visited_states(paths);
        let entropy_nats = if pool.len() < entropy.sample_n {
            notes.push(format!("entropy omitted: {} distinct path states, need {}", pool.len(), entropy.sample_n));
            None
        } else {
            match kl_entropy(&pool, w, entropy, &mut stream(seed, Purpose::Entropy)) {
                Ok(h) => Some(h),
                Err(e) => {
                    notes.push(format!("entropy omitted: {e}"));
                    None
                }
            }
        };
        let avg_hausdorff = avg_hausdorff(paths, w);
        if avg_hausdorff.is_none() {
            notes.push("average Hausdorff omitted: no goal has two paths".to_string());
        }
        Self { path_count: paths.len(), coverage_pct, entropy_nats, avg_hausdorff, notes }
    }

    /// Metrics of a planner run; coverage is taken from the tree.
    pub fn from_outcome(outcome: &PlanOutcome, stable: &[StableState], w: &Weights, entropy: &EntropySettings, seed: u64) -> Self {
        let coverage = coverage_from_tree(&outcome.tree, stable, outcome.epsilon, w);
        Self::from_paths(&outcome.paths, coverage, w, entropy, seed)
    }
}

/// Means over several runs. Optional metrics are averaged over the runs that
/// report them and are absent when none does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub path_count: f64,
    pub coverage_pct: f64,
    pub entropy_nats: Option<f64>,
    pub avg_hausdorff: Option<f64>,
}

impl MetricsSummary {
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Self {
        let reports: Vec<_> = reports.into_iter().collect();
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            runs: reports.len(),
            path_count: mean(reports.iter().map(|r| r.path_count as f64).collect()).unwrap_or(0.0),
            coverage_pct: mean(reports.iter().map(|r| r.coverage_pct).collect()).unwrap_or(0.0),
            entropy_nats: mean(reports.iter().filter_map(|r| r.entropy_nats).collect()),
            avg_hausdorff: mean(reports.iter().filter_map(|r| r.avg_hausdorff).collect()),
        }
    }
}
