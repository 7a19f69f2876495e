use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::distance::{distance_unchecked, Weights};
use super::tree::SearchTree;
use super::PlannerError;
use crate::physics::{ActionCommand, SystemState};
use crate::stability::StableState;

/// A root-to-leaf tree path ending within the goal radius of a stable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Stable-state id of the root.
    pub start_id: usize,
    pub goal_id: usize,
    /// Metric distance (square root of the weighted distance) of the last state to the goal.
    pub terminal_distance: f64,
    /// Tree node ids along the path; empty for paths not taken from a tree.
    #[serde(default)]
    pub node_ids: Vec<usize>,
    pub states: Vec<SystemState>,
    pub actions: Vec<ActionCommand>,
}

/// Undirected Hausdorff distance between two point sets under `d`.
pub fn hausdorff_by<T>(p: &[T], q: &[T], d: impl Fn(&T, &T) -> f64) -> f64 {
    let directed = |a: &[T], b: &[T]| {
        a.iter().map(|x| b.iter().map(|y| d(x, y)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(p, q).max(directed(q, p))
}

/// Hausdorff distance between the state sets of two paths, with the square
/// root of the weighted distance as base metric.
pub fn hausdorff(p: &Path, q: &Path, w: &Weights) -> Result<f64, PlannerError> {
    if p.states.is_empty() || q.states.is_empty() {
        return Err(PlannerError::EmptyPath);
    }
    Ok(hausdorff_by(&p.states, &q.states, |a, b| distance_unchecked(a, b, w).sqrt()))
}

fn common_prefix(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// `hausdorff(p, q) > threshold`, answered without computing the full distance.
pub fn hausdorff_exceeds(p: &Path, q: &Path, threshold: f64, w: &Weights) -> bool {
    let shared = common_prefix(&p.node_ids, &q.node_ids);
    let directed_exceeds = |a: &Path, b: &Path| {
        a.states[shared..]
            .iter()
            .any(|x| !b.states.iter().any(|y| distance_unchecked(x, y, w).sqrt() <= threshold))
    };
    directed_exceeds(p, q) || directed_exceeds(q, p)
}

/// Every (node, goal) pair with the node strictly within `epsilon` of the
/// goal, as the root-to-node path. The root node and the root's own stable
/// state are excluded.
pub fn extract_paths(tree: &SearchTree, stable: &[StableState], epsilon: f64, w: &Weights) -> Vec<Path> {
    let mut out = Vec::new();
    for node in tree.nodes.iter().skip(1) {
        for s in stable.iter().filter(|s| s.id != tree.root_id) {
            let d = distance_unchecked(&node.state, &s.config, w).sqrt();
            if d < epsilon {
                out.push(path_to(tree, node.id, s.id, d));
            }
        }
    }
    out
}

fn path_to(tree: &SearchTree, leaf: usize, goal_id: usize, terminal_distance: f64) -> Path {
    let node_ids = tree.path_to_root(leaf);
    let states = node_ids.iter().map(|i| tree.nodes[*i].state.clone()).collect();
    let actions = node_ids[1..]
        .iter()
        .map(|i| tree.nodes[*i].incoming_action.clone().expect("non-root node has an action"))
        .collect();
    Path { start_id: tree.root_id, goal_id, terminal_distance, node_ids, states, actions }
}

/// Greedy diversity filter, run per goal in ascending goal order: paths are
/// visited in shuffled order and kept when farther than `d_min` (Hausdorff)
/// from every path already kept for the same goal.
pub fn remove_redundant<R: Rng + ?Sized>(paths: Vec<Path>, d_min: f64, w: &Weights, rng: &mut R) -> Vec<Path> {
    let mut groups: BTreeMap<usize, Vec<Path>> = BTreeMap::new();
    for p in paths {
        groups.entry(p.goal_id).or_default().push(p);
    }
    let mut out = Vec::new();
    for (_, mut group) in groups {
        group.shuffle(rng);
        let mut kept: Vec<Path> = Vec::new();
        for p in group {
            if kept.iter().all(|k| hausdorff_exceeds(&p, k, d_min, w)) {
                kept.push(p);
            }
        }
        out.extend(kept);
    }
    out
}
