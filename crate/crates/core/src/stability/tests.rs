use super::*;
use crate::physics::{min_separation, sphere_floor, spheres_cube, spheres_ramp, RAMP_INCLINE_DEG};
use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn floor_only() -> (SceneSpec, ContactAssignment) {
    let scene = sphere_floor();
    let a = ContactAssignment { contacts: vec![(BodyId::Object(0), BodyId::Surface(0))] };
    (scene, a)
}

fn robot_far() -> Vector3<f64> {
    Vector3::new(0.4, 0.4, 0.35)
}

#[test]
fn balanced_sphere_has_zero_residual() {
    let (scene, a) = floor_only();
    let config = SystemState::at_rest(&[robot_far()], vec![Pose::at(Vector3::new(0.1, -0.2, 0.1))]);
    let vars = [ContactVariable { point: Vector3::new(0.1, -0.2, 0.0), force: Vector3::new(0.0, 0.0, 9.81) }];
    let r = evaluate_residuals(&config, &vars, &a, &scene).unwrap();
    assert!(r.equality.iter().all(|v| v.abs() < 1e-12), "{:?}", r.equality);
    assert_eq!(r.inequality_violation(), 0.0);
}

#[test]
fn cone_violation_value() {
    let (scene, a) = floor_only();
    let config = SystemState::at_rest(&[robot_far()], vec![Pose::at(Vector3::new(0.0, 0.0, 0.1))]);
    let vars = [ContactVariable { point: Vector3::zeros(), force: Vector3::new(9.81, 0.0, 9.81) }];
    let r = evaluate_residuals(&config, &vars, &a, &scene).unwrap();
    assert_relative_eq!(r.inequality_violation(), 4.905, epsilon = 1e-12);
}

#[test]
fn dimension_mismatch() {
    let (scene, a) = floor_only();
    let config = SystemState::at_rest(&[robot_far()], vec![Pose::at(Vector3::new(0.0, 0.0, 0.1))]);
    assert!(matches!(
        evaluate_residuals(&config, &[], &a, &scene),
        Err(StabilityError::DimensionMismatch(_))
    ));
}

fn frictionless_ramp() -> (SceneSpec, ContactAssignment, SystemState) {
    let mut scene = spheres_ramp();
    scene.friction_mu = 0.0;
    let a = ContactAssignment { contacts: vec![(BodyId::Object(0), BodyId::Surface(0))] };
    let n = scene.static_surfaces[0].normal;
    let config = SystemState::at_rest(&[Vector3::new(-0.5, 0.2, 0.3)], vec![Pose::at(n * 0.08)]);
    (scene, a, config)
}

#[test]
fn frictionless_ramp_residual_lower_bound() {
    let (scene, a, config) = frictionless_ramp();
    let n = scene.static_surfaces[0].normal;
    let bound = scene.gravity * RAMP_INCLINE_DEG.to_radians().sin();
    // Admissible forces under a zero friction coefficient are non-negative
    // multiples of the normal; scan them and refine with golden sections.
    let norm_at = |s: f64| {
        let vars = [ContactVariable { point: Vector3::zeros(), force: n * s }];
        let r = evaluate_residuals(&config, &vars, &a, &scene).unwrap();
        assert!(r.inequality_violation() < 1e-9);
        r.equality_norm()
    };
    let mut best = f64::INFINITY;
    for i in 0..=400 {
        best = best.min(norm_at(i as f64 * 0.05));
    }
    let (mut lo, mut hi) = (0.0f64, 20.0f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (x1, x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
        if norm_at(x1) < norm_at(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    best = best.min(norm_at(0.5 * (lo + hi)));
    assert!(best >= bound - 1e-9, "{best} < {bound}");
    assert_relative_eq!(best, bound, epsilon = 1e-6);
}

#[test]
fn frictionless_ramp_projection_fails() {
    let (scene, a, config) = frictionless_ramp();
    let settings = SolverSettings::default();
    let err = project_to_stable(&config, &a, &scene, &settings).unwrap_err();
    match err {
        StabilityError::MaxIterations { outer_iterations, eq_residual, ineq_violation } => {
            assert!((1..=settings.max_outer).contains(&outer_iterations));
            assert!(eq_residual > settings.eq_tol || ineq_violation > settings.ineq_tol);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sphere_drops_straight_onto_floor() {
    let (scene, a) = floor_only();
    let x_bar = SystemState::at_rest(&[robot_far()], vec![Pose::at(Vector3::new(0.1, 0.05, 0.5))]);
    let s = project_to_stable(&x_bar, &a, &scene, &SolverSettings::default()).unwrap();
    let p = s.config.object_poses[0].position;
    assert!((p.xy() - Vector3::new(0.1, 0.05, 0.0).xy()).norm() < 1e-3);
    assert_relative_eq!(p.z, 0.1, epsilon = 1e-4);
    assert!((s.contact_vars[0].force - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-3);
    assert!(s.residual_norm <= 1e-4);
    assert!(validate_stability(&s, &scene, DEFAULT_HOLD_TIME, DEFAULT_DRIFT_TOL));
}

#[test]
fn projecting_a_stable_state_keeps_it() {
    let (scene, a) = floor_only();
    let x_bar = SystemState::at_rest(&[robot_far()], vec![Pose::at(Vector3::new(-0.2, 0.1, 0.1))]);
    let s = project_to_stable(&x_bar, &a, &scene, &SolverSettings::default()).unwrap();
    let diff: f64 = s.config.scalars().zip(x_bar.scalars()).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(diff.sqrt() < 1e-6);
}

#[test]
fn validate_examples() {
    let (scene, a) = floor_only();
    let resting = StableState {
        config: SystemState::at_rest(&[robot_far()], vec![Pose::at(Vector3::new(0.0, 0.0, 0.1))]),
        assignment: a.clone(),
        contact_vars: vec![ContactVariable { point: Vector3::zeros(), force: Vector3::new(0.0, 0.0, 9.81) }],
        residual_norm: 0.0,
        id: 0,
    };
    assert!(validate_stability(&resting, &scene, 1.0, 0.02));
    let mut floating = resting.clone();
    floating.config.object_poses[0].position.z = 0.5;
    assert!(!validate_stability(&floating, &scene, 1.0, 0.02));
}

fn fd_check(scene: &SceneSpec, seed: u64, points: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    while checked < points {
        let a = sample_contact_assignment(scene, &mut rng).unwrap();
        let x = sample_x_bar(scene, &mut rng);
        let program = if checked % 2 == 0 {
            StabilityProgram::new(scene, &a).unwrap()
        } else {
            StabilityProgram::smooth(scene, &a).unwrap()
        };
        let mut vars = initial_contact_vars(&x, &a, scene);
        for v in &mut vars {
            v.point += Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            v.force += Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..3.0));
        }
        let z = program.pack(&x, &vars).unwrap();
        let (je, ji) = program.jacobians_at(&z);
        let h = 1e-6;
        for j in 0..z.len() {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            let (rp, rm) = (program.residuals_at(&zp), program.residuals_at(&zm));
            let cols = [
                (&je, &rp.equality, &rm.equality),
                (&ji, &rp.inequality, &rm.inequality),
            ];
            for (jac, p, m) in cols {
                for i in 0..p.len() {
                    let fd = (p[i] - m[i]) / (2.0 * h);
                    let an = jac[(i, j)];
                    let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1.0);
                    assert!(err < 1e-5, "row {i} col {j}: analytic {an} fd {fd}");
                }
            }
        }
        checked += 1;
    }
}

#[test]
fn jacobians_match_finite_differences() {
    fd_check(&spheres_ramp(), 5, 20);
    fd_check(&spheres_cube(), 6, 20);
}

#[test]
fn sampled_states_are_sound_and_idempotent() {
    for scene in [spheres_ramp(), spheres_cube()] {
        let settings = SamplerSettings::default();
        let (states, stats) = sample_stable_states(3, &scene, 21, &settings).unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(stats.attempts.len(), 3);
        for (i, s) in states.iter().enumerate() {
            assert_eq!(s.id, i);
            assert!(s.residual_norm <= 1e-4);
            assert!(s.config.is_at_rest());
            assert!(min_separation(&s.config, &scene) >= -1e-3);
            assert!(validate_stability(s, &scene, 1.0, 0.02));
            let mu = scene.friction_mu;
            let r = evaluate_residuals(&s.config, &s.contact_vars, &s.assignment, &scene).unwrap();
            assert!(r.inequality_violation() <= 1e-4 + 1e-12, "{mu}");
            let again = project_to_stable(&s.config, &s.assignment, &scene, &settings.solver).unwrap();
            let moved: f64 =
                again.config.scalars().zip(s.config.scalars()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(moved < 1e-5, "moved {moved}");
        }
    }
}

#[test]
fn sampling_is_deterministic() {
    let scene = spheres_ramp();
    let settings = SamplerSettings::default();
    let a = sample_stable_states(2, &scene, 9, &settings).unwrap();
    let b = sample_stable_states(2, &scene, 9, &settings).unwrap();
    assert_eq!(a, b);
    let (head, _) = sample_stable_range(0..1, &scene, 9, &settings).unwrap();
    let (tail, _) = sample_stable_range(1..2, &scene, 9, &settings).unwrap();
    assert_eq!([head, tail].concat(), a.0);
}

#[test]
fn flat_floor_single_state_is_quick() {
    let (states, stats) = sample_stable_states(1, &sphere_floor(), 4, &SamplerSettings::default()).unwrap();
    assert_eq!(states.len(), 1);
    assert!(stats.attempts[0] <= 20, "{:?}", stats);
}

#[test]
fn zero_states_is_an_error() {
    assert!(sample_stable_states(0, &sphere_floor(), 0, &SamplerSettings::default()).is_err());
}

#[test]
fn random_rotations_are_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mean_w = 0.0;
    for _ in 0..2000 {
        let q = random_rotation(&mut rng);
        assert_relative_eq!(q.quaternion().norm(), 1.0, epsilon = 1e-12);
        mean_w += q.w.abs();
    }
    // E|w| for a uniform rotation equals 4 / (3 pi).
    assert_relative_eq!(mean_w / 2000.0, 4.0 / (3.0 * std::f64::consts::PI), epsilon = 0.02);
}
