use super::*;
use crate::physics::{sphere_floor, Pose};
use crate::stability::ContactAssignment;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stable_at(id: usize, robot: Vector3<f64>, object: Vector3<f64>) -> StableState {
    StableState {
        config: SystemState::at_rest(&[robot], vec![Pose::at(object)]),
        assignment: ContactAssignment { contacts: vec![] },
        contact_vars: vec![],
        residual_norm: 0.0,
        id,
    }
}

fn floor_states(m: usize) -> Vec<StableState> {
    (0..m)
        .map(|i| {
            let x = -0.3 + 0.6 * i as f64 / (m - 1) as f64;
            stable_at(i, Vector3::new(x - 0.2, 0.0, 0.1), Vector3::new(x, 0.0, 0.1))
        })
        .collect()
}

fn small(seed: u64) -> PlannerConfig {
    PlannerConfig { n_max: 30, k: 4, n: 4, n_candidates: 16, seed, ..PlannerConfig::default() }
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>(), Ok(m));
        assert_eq!(m.to_string(), m.name());
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
    }
    assert!("rrt".parse::<Method>().is_err());
}

#[test]
fn variants_are_config_deltas() {
    let base = PlannerConfig::default();
    let get = |m: Method| m.planner_config(&base, 0.2).unwrap();
    assert_eq!(get(Method::Stage), base);
    assert_eq!(get(Method::NoRejection), PlannerConfig { node_rejection: false, ..base.clone() });
    assert_eq!(get(Method::NoNBest), PlannerConfig { n: 1, ..base.clone() });
    assert_eq!(get(Method::NoKnn), PlannerConfig { k: 1, ..base.clone() });
    assert_eq!(get(Method::Uniform80), PlannerConfig { stable_sample_prob: 0.2, ..base.clone() });
    assert_eq!(
        get(Method::RrtSim),
        PlannerConfig { k: 1, n: 1, node_rejection: false, stable_sample_prob: 0.2, ..base.clone() }
    );
    assert_eq!(Method::PredictiveSampling.planner_config(&base, 0.2), None);
}

#[test]
fn full_goal_bias_rrt_with_nbest_and_rejection_is_the_knn_ablation() {
    let scene = sphere_floor();
    let stable = floor_states(5);
    let base = small(4);
    let rrt = PlannerConfig { n: base.n, node_rejection: true, ..rrt_sim_config(&base, 1.0) };
    let knn = Method::NoKnn.planner_config(&base, 0.2).unwrap();
    assert_eq!(rrt, knn);
    let a = plan(&rrt, &stable, &scene).unwrap();
    let b = plan(&knn, &stable, &scene).unwrap();
    assert_eq!(a.tree, b.tree);
    assert_eq!(a.paths, b.paths);
}

#[test]
fn rrt_sim_is_deterministic_and_reports_metrics() {
    let scene = sphere_floor();
    let stable = floor_states(5);
    let (a, ra) = run_rrt_sim(&small(2), 0.2, &stable, &scene).unwrap();
    let (b, rb) = run_rrt_sim(&small(2), 0.2, &stable, &scene).unwrap();
    assert_eq!(a.tree, b.tree);
    assert_eq!(ra, rb);
    assert_eq!(ra.path_count, a.paths.len());
    assert_eq!(a.stats.rejections, 0);
    assert!(run_rrt_sim(&small(2), 1.5, &stable, &scene).is_err());
}

#[test]
fn predictive_sampling_at_goal_succeeds_immediately() {
    let scene = sphere_floor();
    let s = floor_states(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = run_predictive_sampling(
        &PredictiveSamplingConfig::default(),
        &s[1],
        &s[1],
        &scene,
        0.1,
        &Weights::default(),
        0.25,
        1_000_000,
        &mut rng,
    )
    .unwrap();
    assert!(out.success);
    assert!(out.path.actions.is_empty());
    assert_eq!(out.path.states.len(), 1);
    assert_eq!(out.sim_steps, 0);
}

#[test]
fn predictive_sampling_pushes_a_sphere_on_the_floor() {
    let scene = sphere_floor();
    let start = stable_at(0, Vector3::new(-0.17, 0.0, 0.1), Vector3::new(0.0, 0.0, 0.1));
    let goal = stable_at(1, Vector3::new(-0.07, 0.0, 0.1), Vector3::new(0.1, 0.0, 0.1));
    let w = Weights::default();
    let epsilon = crate::planner::default_epsilon(&scene, &w);
    let budget = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = run_predictive_sampling(
        &PredictiveSamplingConfig::default(),
        &start,
        &goal,
        &scene,
        epsilon,
        &w,
        0.25,
        budget,
        &mut rng,
    )
    .unwrap();
    assert!(out.success, "final distance {}", out.final_distance);
    assert!(out.final_distance < epsilon);
    assert!(out.sim_steps <= budget);
    assert_eq!(out.path.states.len(), out.path.actions.len() + 1);
    let replay = physics::rollout(&start.config, &out.path.actions, &scene).unwrap();
    assert_eq!(replay.as_slice(), &out.path.states[1..]);
}

#[test]
fn predictive_sampling_respects_budget() {
    let scene = sphere_floor();
    let s = floor_states(3);
    let config = PredictiveSamplingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = Weights::default();
    let out = run_predictive_sampling(&config, &s[0], &s[2], &scene, 0.01, &w, 0.25, 1000, &mut rng).unwrap();
    assert!(!out.success);
    assert_eq!(out.sim_steps, 0);
    let budget = 30_000;
    let out = run_predictive_sampling(&config, &s[0], &s[2], &scene, 0.01, &w, 0.25, budget, &mut rng).unwrap();
    assert!(!out.success);
    assert!(out.sim_steps <= budget);
    assert!(!out.path.actions.is_empty());
    let bad = PredictiveSamplingConfig { samples: 0, ..config };
    assert!(run_predictive_sampling(&bad, &s[0], &s[2], &scene, 0.01, &w, 0.25, budget, &mut rng).is_err());
}

#[test]
fn predictive_sampling_over_all_goals() {
    let scene = sphere_floor();
    let stable = floor_states(4);
    let planner = PlannerConfig { n_max: 20, ..small(5) };
    let config = PredictiveSamplingConfig { horizon: 4, samples: 8, ..Default::default() };
    let (outcomes, report) = run_predictive_sampling_all(&config, &planner, &stable, &scene).unwrap();
    assert_eq!(outcomes.len(), 3);
    let per_pair = planner_sim_budget(&planner, &scene).unwrap() / 3;
    assert!(outcomes.iter().all(|o| o.sim_steps <= per_pair));
    let root = draw_root(&stable, 5);
    assert!(outcomes.iter().all(|o| o.path.start_id == stable[root].id && o.path.goal_id != stable[root].id));
    let reached = outcomes.iter().filter(|o| o.success).count();
    assert_eq!(report.path_count, reached);
    assert_eq!(report.coverage_pct, 100.0 * reached as f64 / 3.0);
    let (_, again) = run_predictive_sampling_all(&config, &planner, &stable, &scene).unwrap();
    assert_eq!(report, again);
}

#[test]
fn grid_has_the_five_variants_and_sweeps() {
    let scene = sphere_floor();
    let stable = floor_states(6);
    let base = PlannerConfig { n_max: 10, ..small(0) };
    let sweeps = [Sweep::N(vec![1, 2]), Sweep::K(vec![2]), Sweep::StableCount(vec![3, 6])];
    let cells = run_ablation_grid(&scene, &stable, &base, &[0, 1], &sweeps, &EntropySettings::default()).unwrap();
    let labels: Vec<&str> = cells.iter().step_by(2).map(|c| c.label.as_str()).collect();
    assert_eq!(labels, ["stage", "no_rejection", "no_nbest", "no_knn", "uniform80", "n=1", "n=2", "k=2", "m=3", "m=6"]);
    assert_eq!(cells.len(), 20);
    assert!(cells.chunks(2).all(|c| c[0].seed == 0 && c[1].seed == 1));
    let again = run_ablation_grid(&scene, &stable, &base, &[0, 1], &sweeps, &EntropySettings::default()).unwrap();
    assert!(cells.iter().zip(&again).all(|(a, b)| a.report == b.report && a.stats == b.stats));
    let stage = plan(&PlannerConfig { seed: 1, ..base.clone() }, &stable, &scene).unwrap();
    assert_eq!(cells[1].report.path_count, stage.paths.len());
    assert!(run_ablation_grid(&scene, &stable, &base, &[], &[], &EntropySettings::default()).is_err());
    assert!(run_ablation_grid(&scene, &stable, &base, &[0], &[Sweep::StableCount(vec![7])], &EntropySettings::default()).is_err());
}
