use super::*;
use crate::physics::{sphere_floor, spheres_cube, spheres_ramp, Twist};
use crate::stability::{ContactAssignment, StableState};
use approx::assert_relative_eq;
use nalgebra::Unit;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state<R: Rng>(scene: &SceneSpec, rng: &mut R) -> SystemState {
    let mut s = uniform_state(scene, rng);
    s.robot_v.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    for t in &mut s.object_vels {
        *t = Twist {
            linear: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            angular: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        };
    }
    s
}

fn stable_at(id: usize, config: SystemState) -> StableState {
    StableState { config, assignment: ContactAssignment { contacts: vec![] }, contact_vars: vec![], residual_norm: 0.0, id }
}

/// Resting spheres on the flat-floor scene, spread along x.
fn floor_states(m: usize) -> Vec<StableState> {
    (0..m)
        .map(|i| {
            let x = -0.3 + 0.6 * i as f64 / (m.max(2) - 1) as f64;
            let config = SystemState::at_rest(&[Vector3::new(x - 0.2, 0.0, 0.1)], vec![Pose::at(Vector3::new(x, 0.0, 0.1))]);
            stable_at(i, config)
        })
        .collect()
}

fn brute_knn(states: &[SystemState], goal: &SystemState, k: usize, w: &Weights) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> =
        states.iter().enumerate().map(|(i, s)| (weighted_distance(s, goal, w).unwrap(), i)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.truncate(k);
    v
}

#[test]
fn distance_examples() {
    let w = Weights { w_obj: 10.0, w_rob: 1.0, w_vel: 0.1 };
    let a = SystemState::at_rest(&[Vector3::zeros()], vec![Pose::at(Vector3::zeros())]);
    assert_eq!(weighted_distance(&a, &a, &w).unwrap(), 0.0);
    let b = SystemState::at_rest(&[Vector3::new(0.0, 1.0, 0.0)], vec![Pose::at(Vector3::new(1.0, 0.0, 0.0))]);
    assert_relative_eq!(weighted_distance(&a, &b, &w).unwrap(), 11.0, epsilon = 1e-12);
    let two = SystemState::at_rest(&[Vector3::zeros(), Vector3::zeros()], vec![]);
    assert_eq!(weighted_distance(&a, &two, &w), Err(PlannerError::DimensionMismatch));
}

#[test]
fn rotation_angle_matches_axis_angle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let q = random_rotation(&mut rng);
        let r = UnitQuaternion::from_axis_angle(&axis, theta) * q;
        assert_relative_eq!(rotation_angle(&q, &r), theta, epsilon = 1e-9);
        // The double cover: q and -q are the same rotation.
        let neg = UnitQuaternion::new_unchecked(-r.into_inner());
        assert_relative_eq!(rotation_angle(&q, &neg), theta, epsilon = 1e-9);
    }
    let q = random_rotation(&mut rng);
    assert_eq!(rotation_angle(&q, &q), 0.0);
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_positive(seed in any::<u64>(), cube in any::<bool>()) {
        let scene = if cube { spheres_cube() } else { spheres_ramp() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_state(&scene, &mut rng), random_state(&scene, &mut rng));
        let w = Weights::default();
        let ab = weighted_distance(&a, &b, &w).unwrap();
        prop_assert_eq!(ab, weighted_distance(&b, &a, &w).unwrap());
        prop_assert!(ab > 0.0);
        prop_assert_eq!(weighted_distance(&a, &a, &w).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_axioms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = spheres_ramp();
        let w = Weights::default();
        let path = |rng: &mut ChaCha8Rng| {
            let len = rng.random_range(1..6);
            let states = (0..len).map(|_| random_state(&scene, rng)).collect();
            Path { start_id: 0, goal_id: 0, terminal_distance: 0.0, node_ids: vec![], states, actions: vec![] }
        };
        let (p, q, r) = (path(&mut rng), path(&mut rng), path(&mut rng));
        let d = |a: &Path, b: &Path| hausdorff(a, b, &w).unwrap();
        prop_assert_eq!(d(&p, &q), d(&q, &p));
        prop_assert_eq!(d(&p, &p), 0.0);
        prop_assert!(d(&p, &q) >= 0.0);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
        for t in [0.5 * d(&p, &q), d(&p, &q), 1.5 * d(&p, &q)] {
            prop_assert_eq!(hausdorff_exceeds(&p, &q, t, &w), d(&p, &q) > t);
        }
    }
}

#[test]
fn hausdorff_examples() {
    let abs = |a: &f64, b: &f64| (a - b).abs();
    assert_eq!(hausdorff_by(&[0.0, 1.0], &[0.0, 2.0], abs), 1.0);
    let scene = spheres_ramp();
    let w = Weights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = (random_state(&scene, &mut rng), random_state(&scene, &mut rng));
    let single = |s: &SystemState| Path {
        start_id: 0,
        goal_id: 0,
        terminal_distance: 0.0,
        node_ids: vec![],
        states: vec![s.clone()],
        actions: vec![],
    };
    let d = hausdorff(&single(&x), &single(&y), &w).unwrap();
    assert_eq!(d, weighted_distance(&x, &y, &w).unwrap().sqrt());
    let empty = Path { states: vec![], ..single(&x) };
    assert_eq!(hausdorff(&empty, &single(&y), &w), Err(PlannerError::EmptyPath));
}

#[test]
fn target_selection_frequencies() {
    let scene = sphere_floor();
    let goals = floor_states(5);
    let registry = StableRegistry::new(&goals, 4, Weights::default());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        assert!(matches!(select_target(&registry, &scene, &mut rng, 1.0), Target::Stable(_)));
    }
    let draws = 10_000;
    let stable = (0..draws)
        .filter(|_| matches!(select_target(&registry, &scene, &mut rng, 0.2), Target::Stable(_)))
        .count();
    assert!((stable as f64 / draws as f64 - 0.2).abs() <= 0.015, "{stable}");
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        if let Target::Stable(g) = select_target(&registry, &scene, &mut rng, 1.0) {
            counts[g] += 1;
        }
    }
    let p = 1.0 / 5.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

/// Random tree of `n` nodes with states drawn independently; returns the tree,
/// the registry fed with every node, and the node states.
fn random_tree(scene: &SceneSpec, goals: &[StableState], n: usize, k: usize, seed: u64) -> (SearchTree, StableRegistry) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Weights::default();
    let mut tree = SearchTree::new(random_state(scene, &mut rng), 0);
    let mut registry = StableRegistry::new(goals, k, w);
    registry.update_knn(0, &tree.nodes[0].state);
    for _ in 1..n {
        let parent = rng.random_range(0..tree.len());
        let state = random_state(scene, &mut rng);
        let id = tree.insert(parent, ActionCommand::zero(scene.robots.len(), 0.25), state);
        registry.update_knn(id, &tree.nodes[id].state);
    }
    (tree, registry)
}

fn random_goals(scene: &SceneSpec, m: usize, seed: u64) -> Vec<StableState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|i| stable_at(i + 1, uniform_state(scene, &mut rng))).collect()
}

#[test]
fn heaps_match_brute_force() {
    let scene = spheres_cube();
    let goals = random_goals(&scene, 6, 1);
    let w = Weights::default();
    for (n, k) in [(1, 16), (200, 16), (500, 16), (60, 1), (60, 60)] {
        let (tree, registry) = random_tree(&scene, &goals, n, k, n as u64);
        let states: Vec<_> = tree.nodes.iter().map(|n| n.state.clone()).collect();
        for g in 0..registry.len() {
            let expected = brute_knn(&states, registry.state(g), k, &w);
            assert_eq!(registry.heap_entries(g), expected);
            let ids: Vec<usize> = expected.iter().map(|e| e.1).collect();
            assert_eq!(registry.k_nearest(g, &tree), ids);
            assert_eq!(registry.best_distance()[g], expected[0].0);
        }
    }
}

#[test]
fn heap_edge_cases() {
    let scene = spheres_ramp();
    let goals = random_goals(&scene, 3, 2);
    let (mut tree, registry) = random_tree(&scene, &goals, 1, 4, 9);
    for g in 0..3 {
        assert_eq!(registry.k_nearest(g, &tree), vec![0]);
    }
    tree.disable(0);
    assert!(registry.k_nearest(0, &tree).is_empty());

    // A node farther than everything in a full heap leaves it unchanged.
    let (_, mut registry) = random_tree(&scene, &goals, 50, 4, 10);
    let before: Vec<_> = (0..3).map(|g| registry.heap_entries(g)).collect();
    let mut far = goals[0].config.clone();
    far.robot_q.iter_mut().for_each(|v| *v += 100.0);
    registry.update_knn(50, &far);
    let after: Vec<_> = (0..3).map(|g| registry.heap_entries(g)).collect();
    assert_eq!(before, after);
}

#[test]
fn reduces_distance_matches_definition() {
    let scene = spheres_ramp();
    let w = Weights::default();
    let goals = random_goals(&scene, 4, 4);
    let registry = StableRegistry::new(&goals, 4, w);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let from = random_state(&scene, &mut rng);
    assert!(!registry.reduces_distance(&[&from], &from, 1e-6, false));
    assert!(registry.reduces_distance(&[&goals[2].config], &from, 1e-6, false));
    for _ in 0..100 {
        let from = random_state(&scene, &mut rng);
        let cands: Vec<SystemState> = (0..3).map(|_| random_state(&scene, &mut rng)).collect();
        let refs: Vec<&SystemState> = cands.iter().collect();
        let expected = goals.iter().any(|g| {
            let d0 = weighted_distance(&from, &g.config, &w).unwrap();
            cands.iter().any(|c| weighted_distance(c, &g.config, &w).unwrap() < d0 - 1e-6)
        });
        assert_eq!(registry.reduces_distance(&refs, &from, 1e-6, false), expected);
    }
}

#[test]
fn optimize_actions_keeps_the_n_best() {
    let scene = sphere_floor();
    let w = Weights::default();
    let goals = floor_states(3);
    let from = goals[0].config.clone();
    let target = goals[2].config.clone();
    let run = |n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        optimize_actions(&from, &target, n, 24, 0.25, &w, &scene, &mut rng).unwrap()
    };
    let all = run(24);
    assert_eq!(all.len(), 24);
    // Oracle: replay the same action draws and sort exhaustively.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut expected: Vec<(f64, usize)> = (0..24)
        .map(|i| {
            let a = sample_action(&scene, 0.25, &mut rng);
            let s = physics::step(&from, &a, &scene).unwrap();
            (weighted_distance(&s, &target, &w).unwrap(), i)
        })
        .collect();
    expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let got: Vec<(f64, usize)> = all.iter().map(|c| (c.distance, c.index)).collect();
    assert_eq!(got, expected);
    let five = run(5);
    assert_eq!(five.iter().map(|c| c.index).collect::<Vec<_>>(), expected[..5].iter().map(|e| e.1).collect::<Vec<_>>());
    let one = run(1);
    assert_eq!(one[0].index, expected[0].1);
}

#[test]
fn actions_respect_speed_limits() {
    let scene = spheres_cube();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let a = sample_action(&scene, 0.25, &mut rng);
        assert_eq!(a.robot_target_vel.len(), 2);
        assert!(a.robot_target_vel.iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }
}

fn small_config(seed: u64) -> PlannerConfig {
    PlannerConfig { n_max: 40, k: 4, n: 4, n_candidates: 16, seed, ..PlannerConfig::default() }
}

#[test]
fn empty_budget_gives_root_only() {
    let scene = sphere_floor();
    let stable = floor_states(4);
    let config = PlannerConfig { n_max: 0, ..small_config(1) };
    let (tree, _, stats) = build_tree(&config, &stable, &scene).unwrap();
    assert_eq!(tree.len(), 1);
    assert_eq!(stats.iterations, 0);
    assert!(extract_paths(&tree, &stable, 10.0, &config.weights).is_empty());
}

#[test]
fn tree_is_valid_and_replays() {
    let scene = sphere_floor();
    let stable = floor_states(5);
    let config = small_config(3);
    let (tree, registry, stats) = build_tree(&config, &stable, &scene).unwrap();
    assert_eq!(stats.iterations, config.n_max);
    assert_eq!(tree.len(), 1 + config.n * stats.expansions);
    assert_eq!(tree.root().state, stable[tree.root_id].config);
    assert!(tree.root().parent.is_none() && tree.root().incoming_action.is_none());
    for node in tree.nodes.iter().skip(1) {
        let parent = &tree.nodes[node.parent.unwrap()];
        assert!(parent.id < node.id);
        assert_eq!(node.depth, parent.depth + 1);
        let replayed = physics::step(&parent.state, node.incoming_action.as_ref().unwrap(), &scene).unwrap();
        assert_eq!(replayed, node.state);
    }
    let states: Vec<_> = tree.nodes.iter().map(|n| n.state.clone()).collect();
    for g in 0..registry.len() {
        let brute = brute_knn(&states, registry.state(g), 1, &config.weights);
        assert_eq!(registry.best_distance()[g], brute[0].0);
    }
}

#[test]
fn rejection_toggle() {
    let scene = sphere_floor();
    let stable = floor_states(4);
    let with = small_config(5);
    let without = PlannerConfig { node_rejection: false, ..with.clone() };
    let (t1, _, s1) = build_tree(&with, &stable, &scene).unwrap();
    let (t2, _, s2) = build_tree(&without, &stable, &scene).unwrap();
    assert!(t2.nodes.iter().all(|n| n.active));
    assert_eq!(s2.rejections, 0);
    assert!(t2.len() >= t1.len());
    assert_eq!(s1.expansions + s1.rejections + s1.all_diverged + s1.no_active_node, s1.iterations);
}

/// Replays a build step by step to check the monotone and exclusion
/// properties that only hold across iterations.
#[test]
fn best_distance_monotone_and_disabled_nodes_stay_leaves() {
    let scene = sphere_floor();
    let stable = floor_states(4);
    let base = PlannerConfig { progress_tol: 1e-3, ..small_config(11) };
    let mut previous: Option<Vec<f64>> = None;
    let mut prev_tree: Option<SearchTree> = None;
    for n_max in (0..=40).step_by(4) {
        let config = PlannerConfig { n_max, ..base.clone() };
        let (tree, registry, _) = build_tree(&config, &stable, &scene).unwrap();
        if let Some(prev) = &previous {
            for (a, b) in prev.iter().zip(registry.best_distance()) {
                assert!(b <= a);
            }
        }
        if let Some(pt) = &prev_tree {
            assert_eq!(&tree.nodes[..pt.len()].iter().map(|n| &n.state).collect::<Vec<_>>(), &pt.nodes.iter().map(|n| &n.state).collect::<Vec<_>>());
            for old in pt.nodes.iter().filter(|n| !n.active) {
                assert!(tree.nodes[pt.len()..].iter().all(|n| n.parent != Some(old.id)));
            }
        }
        previous = Some(registry.best_distance().to_vec());
        prev_tree = Some(tree);
    }
}

#[test]
fn builds_are_deterministic() {
    let scene = sphere_floor();
    let stable = floor_states(4);
    let config = PlannerConfig { stable_sample_prob: 0.5, ..small_config(21) };
    let a = plan(&config, &stable, &scene).unwrap();
    let b = plan(&config, &stable, &scene).unwrap();
    assert_eq!(a.tree, b.tree);
    assert_eq!(a.paths, b.paths);
    assert_eq!(a.stats, b.stats);
    assert!(a.stats.uniform_targets > 0 && a.stats.stable_targets > 0);
}

#[test]
fn extraction_matches_double_loop() {
    let scene = sphere_floor();
    let stable = floor_states(5);
    let config = small_config(9);
    let (tree, _, _) = build_tree(&config, &stable, &scene).unwrap();
    let w = config.weights;
    for eps in [0.05, 0.2, 0.6, 2.0] {
        let got = extract_paths(&tree, &stable, eps, &w);
        let mut expected = Vec::new();
        for node in &tree.nodes[1..] {
            for s in &stable {
                let d = weighted_distance(&node.state, &s.config, &w).unwrap().sqrt();
                if s.id != tree.root_id && d < eps {
                    expected.push((node.id, s.id, d));
                }
            }
        }
        let got_keys: Vec<_> = got.iter().map(|p| (*p.node_ids.last().unwrap(), p.goal_id, p.terminal_distance)).collect();
        assert_eq!(got_keys, expected);
        for p in &got {
            assert_eq!(p.states.len(), p.actions.len() + 1);
            assert_eq!(p.states[0], tree.root().state);
            assert!(p.terminal_distance < eps);
            assert_eq!(p.start_id, tree.root_id);
        }
    }
}

#[test]
fn node_at_a_stable_state_has_zero_terminal_distance() {
    let stable = floor_states(3);
    let mut tree = SearchTree::new(stable[0].config.clone(), 0);
    let id = tree.insert(0, ActionCommand::zero(1, 0.25), stable[1].config.clone());
    let paths = extract_paths(&tree, &stable, 0.01, &Weights::default());
    assert_eq!(paths.len(), 1);
    assert_eq!(paths[0].goal_id, 1);
    assert_eq!(paths[0].terminal_distance, 0.0);
    assert_eq!(paths[0].node_ids, vec![0, id]);
}

fn greedy_oracle(paths: &[Path], d_min: f64, w: &Weights, seed: u64) -> Vec<Path> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut goals: Vec<usize> = paths.iter().map(|p| p.goal_id).collect();
    goals.sort();
    goals.dedup();
    let mut out = Vec::new();
    for g in goals {
        let mut group: Vec<Path> = paths.iter().filter(|p| p.goal_id == g).cloned().collect();
        group.shuffle(&mut rng);
        let mut kept: Vec<Path> = Vec::new();
        for p in group {
            if kept.iter().all(|k| hausdorff(&p, k, w).unwrap() > d_min) {
                kept.push(p);
            }
        }
        out.extend(kept);
    }
    out
}

#[test]
fn redundancy_filter() {
    let scene = sphere_floor();
    let stable = floor_states(5);
    let config = PlannerConfig { n_max: 80, ..small_config(13) };
    let (tree, _, _) = build_tree(&config, &stable, &scene).unwrap();
    let w = config.weights;
    let raw = extract_paths(&tree, &stable, 0.6, &w);
    assert!(raw.len() > 10, "{}", raw.len());
    for d_min in [0.01, 0.05, 0.2] {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kept = remove_redundant(raw.clone(), d_min, &w, &mut rng);
        assert_eq!(kept, greedy_oracle(&raw, d_min, &w, 4));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.goal_id == b.goal_id {
                    assert!(hausdorff(a, b, &w).unwrap() > d_min);
                }
            }
        }
    }
    let p = raw[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(remove_redundant(vec![p.clone(), p.clone()], 1e-9, &w, &mut rng).len(), 1);
    let mut far = p.clone();
    far.node_ids.clear();
    far.states.iter_mut().for_each(|s| s.robot_q[0] += 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut both = vec![p.clone(), far];
    both.shuffle(&mut rng);
    assert_eq!(remove_redundant(both, 0.5, &w, &mut rng).len(), 2);
}

#[test]
fn invalid_configs_are_rejected() {
    let scene = sphere_floor();
    let stable = floor_states(3);
    for bad in [
        PlannerConfig { k: 0, ..small_config(0) },
        PlannerConfig { n: 20, n_candidates: 16, ..small_config(0) },
        PlannerConfig { epsilon: Some(0.0), ..small_config(0) },
        PlannerConfig { d_min: Some(-1.0), ..small_config(0) },
        PlannerConfig { stable_sample_prob: 1.5, ..small_config(0) },
    ] {
        assert!(matches!(build_tree(&bad, &stable, &scene), Err(PlannerError::InvalidConfig(_))));
    }
    assert!(build_tree(&small_config(0), &stable[..1], &scene).is_err());
}

#[test]
fn default_epsilon_scales_with_scene() {
    let w = Weights::default();
    let ramp = spheres_ramp();
    let (lo, hi) = ramp.extent();
    let d2 = (hi - lo).norm_squared();
    assert_relative_eq!(scene_diameter(&ramp, &w), (11.0 * d2).sqrt(), epsilon = 1e-12);
    assert_relative_eq!(default_epsilon(&ramp, &w), 0.05 * (11.0 * d2).sqrt(), epsilon = 1e-12);
    let cube = spheres_cube();
    let (lo, hi) = cube.extent();
    let expected = 10.0 * ((hi - lo).norm_squared() + std::f64::consts::PI.powi(2)) + 2.0 * (hi - lo).norm_squared();
    assert_relative_eq!(scene_diameter(&cube, &w), expected.sqrt(), epsilon = 1e-12);
}
