//! Sampling of physically stable states.
//!
//! A random configuration `x_bar` is projected onto the set of quasi-static
//! equilibria for a randomly drawn contact assignment by solving
//! `min |x - x_bar|^2` subject to force/moment balance, contact anchoring,
//! friction cones and collision avoidance. Solutions are then held in the
//! simulator for a second to confirm they are dynamically stable.

mod assignment;
mod nlp;
mod solver;

pub use assignment::{admissible_pairs, sample_contact_assignment, sample_contact_assignment_with_count};
pub use solver::SolverSettings;

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{
    self, geometry::{box_corners_local, sphere_box}, ActionCommand, BodyId, Pose, SceneSpec, Shape,
    SystemState,
};
use crate::rng::{indexed_stream, Purpose};
use nlp::{Cone, Layout, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid contact assignment: {0}")]
    InvalidAssignment(String),
    #[error("no convergence after {outer_iterations} outer iterations (equality residual {eq_residual:.3e}, inequality violation {ineq_violation:.3e})")]
    MaxIterations { outer_iterations: usize, eq_residual: f64, ineq_violation: f64 },
    #[error("stable state {0} not found within the attempt budget")]
    Exhausted(usize),
    #[error(transparent)]
    Physics(#[from] physics::PhysicsError),
}

/// Frame pairs in contact. The first frame of each pair is always a free object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactAssignment {
    pub contacts: Vec<(BodyId, BodyId)>,
}

/// Point of attack and force (acting on the pair's object) of one contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactVariable {
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableState {
    pub config: SystemState,
    pub assignment: ContactAssignment,
    pub contact_vars: Vec<ContactVariable>,
    pub residual_norm: f64,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpResiduals {
    pub equality: Vec<f64>,
    pub inequality: Vec<f64>,
}

impl NlpResiduals {
    pub fn equality_norm(&self) -> f64 {
        self.equality.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest positive inequality value; zero when all are satisfied.
    pub fn inequality_violation(&self) -> f64 {
        self.inequality.iter().fold(0.0, |m, v| m.max(*v))
    }
}

/// The stable-state program for one assignment, exposed over its raw decision
/// vector for diagnostics such as derivative checks.
pub struct StabilityProgram<'a> {
    problem: Problem<'a>,
}

impl<'a> StabilityProgram<'a> {
    pub fn new(scene: &'a SceneSpec, assignment: &'a ContactAssignment) -> Result<Self, StabilityError> {
        assignment.validate(scene)?;
        Ok(Self { problem: Problem::new(scene, assignment) })
    }

    /// The form minimized by the solver, with friction cones written as
    /// `|f_t|^2 - mu^2 f_n^2 <= 0`.
    pub fn smooth(scene: &'a SceneSpec, assignment: &'a ContactAssignment) -> Result<Self, StabilityError> {
        let mut program = Self::new(scene, assignment)?;
        program.problem.cone = Cone::Squared;
        Ok(program)
    }

    pub fn dim(&self) -> usize {
        self.problem.layout.n
    }

    pub fn pack(&self, config: &SystemState, vars: &[ContactVariable]) -> Result<Vec<f64>, StabilityError> {
        check_dims(self.problem.scene, self.problem.assignment, config, vars)?;
        Ok(self.problem.layout.pack(config, vars))
    }

    pub fn residuals_at(&self, z: &[f64]) -> NlpResiduals {
        let (equality, inequality) = self.problem.values(z);
        NlpResiduals { equality, inequality }
    }

    /// Analytic Jacobians `(d equality / dz, d inequality / dz)`.
    pub fn jacobians_at(&self, z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let ev = self.problem.evaluate(z);
        (ev.jeq, ev.jineq)
    }
}

fn check_dims(
    scene: &SceneSpec,
    assignment: &ContactAssignment,
    config: &SystemState,
    vars: &[ContactVariable],
) -> Result<(), StabilityError> {
    if vars.len() != assignment.contacts.len() {
        return Err(StabilityError::DimensionMismatch(format!(
            "{} contact variables for {} contacts",
            vars.len(),
            assignment.contacts.len()
        )));
    }
    config.check(scene).map_err(|e| StabilityError::DimensionMismatch(e.to_string()))
}

/// Equality and inequality residuals of a configuration with its contact variables.
pub fn evaluate_residuals(
    config: &SystemState,
    vars: &[ContactVariable],
    assignment: &ContactAssignment,
    scene: &SceneSpec,
) -> Result<NlpResiduals, StabilityError> {
    let program = StabilityProgram::new(scene, assignment)?;
    let z = program.pack(config, vars)?;
    Ok(program.residuals_at(&z))
}

/// Closest points of the two frames of a contact, averaged.
fn initial_point(config: &SystemState, scene: &SceneSpec, a: usize, b: BodyId) -> Vector3<f64> {
    let pose = &config.object_poses[a];
    let shape = &scene.objects[a].shape;
    let sphere_pair = |c: Vector3<f64>, r: f64| -> Vector3<f64> {
        match shape {
            Shape::Sphere { radius } => {
                let u = (pose.position - c).try_normalize(1e-12).unwrap_or(Vector3::z());
                ((pose.position - u * *radius) + (c + u * r)) * 0.5
            }
            Shape::Box { half_extents } => {
                let (_, on_box, _) = sphere_box(&c, r, &pose.position, &pose.orientation, half_extents);
                let u = (on_box - c).try_normalize(1e-12).unwrap_or(Vector3::z());
                (on_box + (c + u * r)) * 0.5
            }
        }
    };
    match b {
        BodyId::Surface(s) => {
            let hs = &scene.static_surfaces[s];
            let on_a = match shape {
                Shape::Sphere { radius } => pose.position - hs.normal * *radius,
                Shape::Box { half_extents } => box_corners_local(half_extents)
                    .iter()
                    .map(|c| pose.position + pose.orientation.transform_vector(c))
                    .min_by(|x, y| hs.signed_distance(x).total_cmp(&hs.signed_distance(y)))
                    .expect("eight corners"),
            };
            let on_b = on_a - hs.normal * hs.signed_distance(&on_a);
            (on_a + on_b) * 0.5
        }
        BodyId::Robot(r) => sphere_pair(config.robot_pos(r), scene.robots[r].radius),
        BodyId::Object(o) => {
            let other = &config.object_poses[o];
            match &scene.objects[o].shape {
                Shape::Sphere { radius } => sphere_pair(other.position, *radius),
                Shape::Box { half_extents } => {
                    let r = match shape {
                        Shape::Sphere { radius } => *radius,
                        Shape::Box { .. } => 0.0,
                    };
                    let (_, on_box, _) = sphere_box(&pose.position, r, &other.position, &other.orientation, half_extents);
                    let u = (on_box - pose.position).try_normalize(1e-12).unwrap_or(-Vector3::z());
                    (on_box + pose.position + u * r) * 0.5
                }
            }
        }
    }
}

/// Starting contact variables: closest-point pairs and an even share of the
/// object's weight pointing up.
pub fn initial_contact_vars(
    config: &SystemState,
    assignment: &ContactAssignment,
    scene: &SceneSpec,
) -> Vec<ContactVariable> {
    let count = assignment.contacts.len() as f64;
    assignment
        .contacts
        .iter()
        .map(|(a, b)| {
            let BodyId::Object(ai) = *a else { unreachable!("validated assignment") };
            ContactVariable {
                point: initial_point(config, scene, ai, *b),
                force: Vector3::new(0.0, 0.0, scene.objects[ai].mass * scene.gravity / count),
            }
        })
        .collect()
}

const WARM_START_OUTER: usize = 4;

/// Projects `x_bar` onto the stable set defined by `assignment`.
pub fn project_to_stable(
    x_bar: &SystemState,
    assignment: &ContactAssignment,
    scene: &SceneSpec,
    settings: &SolverSettings,
) -> Result<StableState, StabilityError> {
    assignment.validate(scene)?;
    x_bar.check(scene)?;
    let problem = Problem::new(scene, assignment);
    let layout: &Layout = &problem.layout;
    let vars = initial_contact_vars(x_bar, assignment, scene);
    let z0 = layout.pack(x_bar, &vars);
    let target = z0[..layout.n_config].to_vec();
    // Contact points and forces for the unchanged configuration first; a
    // stable input is returned as is, anything else warm-starts the full solve.
    let warm = SolverSettings { max_outer: settings.max_outer.min(WARM_START_OUTER), ..settings.clone() };
    let first = solver::solve(&problem, z0.clone(), &target, layout.n_config, &warm);
    let out = if first.converged {
        first
    } else {
        let start = if first.z.iter().all(|v| v.is_finite()) { first.z } else { z0 };
        solver::solve(&problem, start, &target, 0, settings)
    };
    let fail = StabilityError::MaxIterations {
        outer_iterations: out.outer_iterations,
        eq_residual: out.eq_norm,
        ineq_violation: out.ineq_max,
    };
    if !out.converged {
        return Err(fail);
    }
    let config = layout.config(&out.z);
    let contact_vars = layout.vars(&out.z);
    // Re-evaluate with normalized quaternions.
    let z = layout.pack(&config, &contact_vars);
    let (eq, ineq) = problem.values(&z);
    let res = NlpResiduals { equality: eq, inequality: ineq };
    if res.equality_norm() > settings.eq_tol || res.inequality_violation() > settings.ineq_tol {
        return Err(fail);
    }
    Ok(StableState {
        config,
        assignment: assignment.clone(),
        contact_vars,
        residual_norm: res.equality_norm(),
        id: 0,
    })
}

pub const DEFAULT_HOLD_TIME: f64 = 1.0;
pub const DEFAULT_DRIFT_TOL: f64 = 0.02;
pub const FINAL_SPEED_TOL: f64 = 0.05;

/// Start configuration for a hold test in the penalty simulator: objects sink
/// into their supporting surfaces and robots press into their contacts by the
/// penetration `f_n / k` that carries each solved normal force.
pub fn preloaded_config(s: &StableState, scene: &SceneSpec) -> SystemState {
    let k = scene.contact_stiffness;
    let mut out = s.config.at_rest_copy();
    let mut shifts = vec![Vector3::zeros(); scene.objects.len()];
    for (o, shift) in shifts.iter_mut().enumerate() {
        let rows: Vec<(Vector3<f64>, f64)> = s
            .assignment
            .contacts
            .iter()
            .zip(&s.contact_vars)
            .filter_map(|((a, b), v)| match (a, b) {
                (BodyId::Object(ai), BodyId::Surface(si)) if *ai == o => {
                    let n = scene.static_surfaces[*si].normal;
                    Some((n, -v.force.dot(&n).max(0.0) / k))
                }
                _ => None,
            })
            .collect();
        if rows.is_empty() {
            continue;
        }
        let a = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i].0[j]);
        let rhs = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        if let Ok(d) = a.svd(true, true).solve(&rhs, 1e-9) {
            *shift = Vector3::new(d[0], d[1], d[2]);
        }
        out.object_poses[o].position += *shift;
    }
    for ((a, b), v) in s.assignment.contacts.iter().zip(&s.contact_vars) {
        if let (BodyId::Object(ai), BodyId::Robot(ri)) = (a, b) {
            let q = s.config.robot_pos(*ri);
            let Some(n) = (v.point - q).try_normalize(1e-12) else { continue };
            let depth = v.force.dot(&n).max(0.0) / k + shifts[*ai].dot(&n);
            out.set_robot_pos(*ri, &(q + n * depth));
        }
    }
    out
}

/// Holds the state with zero robot command for `hold_time` seconds, starting
/// from [`preloaded_config`], and checks that no object drifts by `tol` or
/// more from the solved configuration and all objects end nearly at rest.
pub fn validate_stability(s: &StableState, scene: &SceneSpec, hold_time: f64, tol: f64) -> bool {
    let steps = (hold_time / scene.dt).round().max(1.0) as usize;
    let tick = ActionCommand::zero(scene.robots.len(), scene.dt);
    let mut state = preloaded_config(s, scene);
    for _ in 0..steps {
        state = match physics::step(&state, &tick, scene) {
            Ok(next) => next,
            Err(_) => return false,
        };
        let drifted = state
            .object_poses
            .iter()
            .zip(&s.config.object_poses)
            .any(|(a, b)| (a.position - b.position).norm() >= tol);
        if drifted {
            return false;
        }
    }
    state.object_vels.iter().all(|t| t.linear.norm() < FINAL_SPEED_TOL)
}

/// Uniform random configuration at rest: robots within their limits, objects
/// within the scene extent grown 1.5x, boxes with uniformly random orientation.
pub fn sample_x_bar<R: Rng + ?Sized>(scene: &SceneSpec, rng: &mut R) -> SystemState {
    let mut uniform_in = |lo: Vector3<f64>, hi: Vector3<f64>| {
        Vector3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        )
    };
    let robots: Vec<_> = scene.robots.iter().map(|r| uniform_in(r.low(), r.high())).collect();
    let (lo, hi) = scene.scaled_extent(1.5);
    let positions: Vec<_> = scene.objects.iter().map(|_| uniform_in(lo, hi)).collect();
    let poses = scene
        .objects
        .iter()
        .zip(positions)
        .map(|(o, position)| Pose {
            position,
            orientation: if o.is_sphere() { UnitQuaternion::identity() } else { random_rotation(rng) },
        })
        .collect();
    SystemState::at_rest(&robots, poses)
}

/// Uniformly distributed rotation (Shoemake's method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::from_quaternion(Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub max_attempts_per_state: usize,
    pub solver: SolverSettings,
    pub hold_time: f64,
    pub drift_tol: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            max_attempts_per_state: 100,
            solver: SolverSettings::default(),
            hold_time: DEFAULT_HOLD_TIME,
            drift_tol: DEFAULT_DRIFT_TOL,
        }
    }
}

/// Attempts consumed per stable state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingStats {
    pub attempts: Vec<usize>,
    pub solver_failures: usize,
    pub unstable_rejections: usize,
}

impl SamplingStats {
    pub fn total_attempts(&self) -> usize {
        self.attempts.iter().sum()
    }

    pub fn success_rate(&self) -> f64 {
        self.attempts.len() as f64 / self.total_attempts().max(1) as f64
    }

    /// Fraction of states found within `budget` attempts.
    pub fn found_within(&self, budget: usize) -> f64 {
        if self.attempts.is_empty() {
            return 0.0;
        }
        self.attempts.iter().filter(|a| **a <= budget).count() as f64 / self.attempts.len() as f64
    }
}

enum Attempt {
    Stable(Box<StableState>),
    SolverFailed,
    Unstable,
}

fn attempt(scene: &SceneSpec, seed: u64, state_index: usize, k: usize, settings: &SamplerSettings) -> Attempt {
    let index = ((state_index as u64) << 20) | k as u64;
    let mut rng = indexed_stream(seed, Purpose::XBar, index);
    let Ok(assignment) = sample_contact_assignment(scene, &mut rng) else {
        return Attempt::SolverFailed;
    };
    let x_bar = sample_x_bar(scene, &mut rng);
    match project_to_stable(&x_bar, &assignment, scene, &settings.solver) {
        Ok(mut s) => {
            s.id = state_index;
            if validate_stability(&s, scene, settings.hold_time, settings.drift_tol) {
                Attempt::Stable(Box::new(s))
            } else {
                Attempt::Unstable
            }
        }
        Err(_) => Attempt::SolverFailed,
    }
}

/// Samples `m` validated stable states. Attempt `k` for state `i` draws from
/// its own random stream, so results do not depend on the worker count.
pub fn sample_stable_states(
    m: usize,
    scene: &SceneSpec,
    seed: u64,
    settings: &SamplerSettings,
) -> Result<(Vec<StableState>, SamplingStats), StabilityError> {
    if m == 0 {
        return Err(StabilityError::DimensionMismatch("m must be at least 1".into()));
    }
    sample_stable_range(0..m, scene, seed, settings)
}

/// The states with indices in `range` of the set [`sample_stable_states`]
/// draws, so a large set can be built in pieces.
pub fn sample_stable_range(
    range: std::ops::Range<usize>,
    scene: &SceneSpec,
    seed: u64,
    settings: &SamplerSettings,
) -> Result<(Vec<StableState>, SamplingStats), StabilityError> {
    scene.validate()?;
    let batch = rayon::current_num_threads().max(1);
    let mut states = Vec::with_capacity(range.len());
    let mut stats = SamplingStats::default();
    for i in range {
        let mut k = 0;
        let mut found = None;
        while k < settings.max_attempts_per_state && found.is_none() {
            let end = (k + batch).min(settings.max_attempts_per_state);
            let results: Vec<Attempt> =
                (k..end).into_par_iter().map(|j| attempt(scene, seed, i, j, settings)).collect();
            for (j, r) in (k..end).zip(results) {
                match r {
                    Attempt::Stable(s) => {
                        found = Some((j, *s));
                        break;
                    }
                    Attempt::SolverFailed => stats.solver_failures += 1,
                    Attempt::Unstable => stats.unstable_rejections += 1,
                }
            }
            k = end;
        }
        let Some((j, s)) = found else { return Err(StabilityError::Exhausted(i)) };
        stats.attempts.push(j + 1);
        log::debug!("stable state {i} after {} attempts", j + 1);
        states.push(s);
    }
    Ok((states, stats))
}

#[cfg(test)]
mod tests;
