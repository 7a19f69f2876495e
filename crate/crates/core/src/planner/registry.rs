use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rand::Rng;

use super::distance::{distance_unchecked, Weights};
use super::tree::SearchTree;
use crate::physics::SystemState;
use crate::stability::StableState;

/// The fixed goal set with, per goal, the `k` tree nodes nearest to it.
///
/// Entries are ordered by `(distance, node id)`, so ties go to the older node
/// and heap contents are exactly the first `k` of a stable sort.
#[derive(Debug, Clone)]
pub struct StableRegistry {
    ids: Vec<usize>,
    states: Vec<SystemState>,
    heaps: Vec<BinaryHeap<(OrderedFloat<f64>, usize)>>,
    best: Vec<f64>,
    k: usize,
    weights: Weights,
}

impl StableRegistry {
    /// Registry over `goals` (their `id` fields are kept as labels).
    pub fn new<'a>(goals: impl IntoIterator<Item = &'a StableState>, k: usize, weights: Weights) -> Self {
        let (ids, states): (Vec<_>, Vec<_>) = goals.into_iter().map(|s| (s.id, s.config.clone())).unzip();
        let m = ids.len();
        Self {
            ids,
            states,
            heaps: vec![BinaryHeap::with_capacity(k + 1); m],
            best: vec![f64::INFINITY; m],
            k,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Stable-state id of the goal at `index`.
    pub fn id(&self, index: usize) -> usize {
        self.ids[index]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn state(&self, index: usize) -> &SystemState {
        &self.states[index]
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    /// Smallest squared distance seen so far per goal.
    pub fn best_distance(&self) -> &[f64] {
        &self.best
    }

    /// Uniformly drawn goal index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.len())
    }

    /// Records a newly inserted node in every goal's heap.
    pub fn update_knn(&mut self, node_id: usize, state: &SystemState) {
        for g in 0..self.len() {
            let d = distance_unchecked(state, &self.states[g], &self.weights);
            self.push(g, d, node_id);
        }
    }

    fn push(&mut self, g: usize, d: f64, node_id: usize) {
        self.best[g] = self.best[g].min(d);
        let entry = (OrderedFloat(d), node_id);
        let heap = &mut self.heaps[g];
        if heap.len() < self.k {
            heap.push(entry);
        } else if heap.peek().is_some_and(|top| entry < *top) {
            heap.pop();
            heap.push(entry);
        }
    }

    /// Heap entries of a goal as `(distance, node id)`, nearest first.
    pub fn heap_entries(&self, g: usize) -> Vec<(f64, usize)> {
        let mut v: Vec<_> = self.heaps[g].iter().map(|(d, id)| (d.0, *id)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    }

    /// Active nodes among the `k` nearest to goal `g`, nearest first.
    pub fn k_nearest(&self, g: usize, tree: &SearchTree) -> Vec<usize> {
        self.heap_entries(g).into_iter().map(|(_, id)| id).filter(|id| tree.nodes[*id].active).collect()
    }

    /// Whether some candidate is closer than `from` to some goal by more than
    /// `tol`. With `against_best`, the comparison is made with each goal's best
    /// recorded distance instead of with `from`.
    pub fn reduces_distance(&self, candidates: &[&SystemState], from: &SystemState, tol: f64, against_best: bool) -> bool {
        (0..self.len()).any(|g| {
            let goal = &self.states[g];
            let reference =
                if against_best { self.best[g] } else { distance_unchecked(from, goal, &self.weights) };
            candidates.iter().any(|c| distance_unchecked(c, goal, &self.weights) < reference - tol)
        })
    }
}
