use serde::{Deserialize, Serialize};

use crate::physics::{ActionCommand, SystemState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub state: SystemState,
    pub parent: Option<usize>,
    pub incoming_action: Option<ActionCommand>,
    pub depth: usize,
    pub active: bool,
}

/// Kinodynamic search tree; node ids are indices into `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    /// Stable-state id of the root.
    pub root_id: usize,
    pub nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn new(root: SystemState, root_id: usize) -> Self {
        let node = TreeNode { id: 0, state: root, parent: None, incoming_action: None, depth: 0, active: true };
        Self { root_id, nodes: vec![node] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Adds a child of `parent` and returns its id.
    pub fn insert(&mut self, parent: usize, action: ActionCommand, state: SystemState) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode { id, state, parent: Some(parent), incoming_action: Some(action), depth, active: true });
        id
    }

    pub fn disable(&mut self, id: usize) {
        self.nodes[id].active = false;
    }

    pub fn active_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.active).count()
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path_to_root(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut at = id;
        while let Some(p) = self.nodes[at].parent {
            out.push(p);
            at = p;
        }
        out.reverse();
        out
    }
}
