use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::geometry::{box_corners_local, sphere_box};
use super::state::{clamp_speed, BodyId, ContactPair, ContactReport};
use super::{ActionCommand, PhysicsError, SceneSpec, Shape, SystemState};

/// States whose magnitude exceeds this are reported as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy)]
enum Other {
    Surface(usize),
    Robot(usize),
    Object(usize),
}

#[derive(Debug, Clone, Copy)]
struct Contact {
    a: usize,
    b: Other,
    point: Vector3<f64>,
    /// Points from `b` into `a`.
    normal: Vector3<f64>,
    penetration: f64,
}

/// Per-object mass properties resolved once per step.
struct Body {
    inv_mass: f64,
    inertia: Vector3<f64>,
    inv_inertia_world: Matrix3<f64>,
}

fn bodies(state: &SystemState, scene: &SceneSpec) -> Vec<Body> {
    scene
        .objects
        .iter()
        .zip(&state.object_poses)
        .map(|(o, pose)| {
            let inertia = o.inertia_diag();
            let r = pose.orientation.to_rotation_matrix();
            let inv_local = Matrix3::from_diagonal(&inertia.map(|v| 1.0 / v));
            Body {
                inv_mass: 1.0 / o.mass,
                inertia,
                inv_inertia_world: r.matrix() * inv_local * r.matrix().transpose(),
            }
        })
        .collect()
}

fn collect_contacts(state: &SystemState, scene: &SceneSpec, out: &mut Vec<Contact>) {
    out.clear();
    for (a, obj) in scene.objects.iter().enumerate() {
        let pose = &state.object_poses[a];
        let c = pose.position;
        match &obj.shape {
            Shape::Sphere { radius } => {
                for (s, surf) in scene.static_surfaces.iter().enumerate() {
                    let sd = surf.signed_distance(&c) - radius;
                    if sd < 0.0 {
                        out.push(Contact {
                            a,
                            b: Other::Surface(s),
                            point: c - surf.normal * *radius,
                            normal: surf.normal,
                            penetration: -sd,
                        });
                    }
                }
            }
            Shape::Box { half_extents } => {
                let corners = box_corners_local(half_extents);
                for (s, surf) in scene.static_surfaces.iter().enumerate() {
                    for corner in &corners {
                        let x = c + pose.orientation.transform_vector(corner);
                        let sd = surf.signed_distance(&x);
                        if sd < 0.0 {
                            out.push(Contact {
                                a,
                                b: Other::Surface(s),
                                point: x,
                                normal: surf.normal,
                                penetration: -sd,
                            });
                        }
                    }
                }
            }
        }
        for (r, robot) in scene.robots.iter().enumerate() {
            let q = state.robot_pos(r);
            if let Some((point, normal, pen)) = pair_contact(&obj.shape, pose, &Shape::Sphere { radius: robot.radius }, &q, &UnitQuaternion::identity()) {
                out.push(Contact { a, b: Other::Robot(r), point, normal, penetration: pen });
            }
        }
        for b in a + 1..scene.objects.len() {
            let pb = &state.object_poses[b];
            if let Some((point, normal, pen)) = pair_contact(
                &obj.shape,
                pose,
                &scene.objects[b].shape,
                &pb.position,
                &pb.orientation,
            ) {
                out.push(Contact { a, b: Other::Object(b), point, normal, penetration: pen });
            }
        }
    }
}

/// Contact between shape `a` and shape `b`, returning (point, normal into a,
/// penetration) when they overlap.
fn pair_contact(
    sa: &Shape,
    pa: &super::Pose,
    sb: &Shape,
    cb: &Vector3<f64>,
    rb: &UnitQuaternion<f64>,
) -> Option<(Vector3<f64>, Vector3<f64>, f64)> {
    let (sd, point, normal) = pair_geometry(sa, &pa.position, &pa.orientation, sb, cb, rb)?;
    (sd < 0.0).then_some((point, normal, -sd))
}

/// Signed distance between two shapes, a representative contact point and
/// the unit normal pointing from `b` into `a`. `None` for box-box pairs.
fn pair_geometry(
    sa: &Shape,
    ca: &Vector3<f64>,
    ra: &UnitQuaternion<f64>,
    sb: &Shape,
    cb: &Vector3<f64>,
    rb: &UnitQuaternion<f64>,
) -> Option<(f64, Vector3<f64>, Vector3<f64>)> {
    match (sa, sb) {
        (Shape::Sphere { radius: r1 }, Shape::Sphere { radius: r2 }) => {
            let u = ca - cb;
            let d = u.norm();
            let n = if d > 1e-12 { u / d } else { Vector3::z() };
            Some((d - r1 - r2, ca - n * *r1, n))
        }
        (Shape::Sphere { radius }, Shape::Box { half_extents }) => {
            let (sd, p, n) = sphere_box(ca, *radius, cb, rb, half_extents);
            Some((sd, p, n))
        }
        (Shape::Box { half_extents }, Shape::Sphere { radius }) => {
            let (sd, p, n) = sphere_box(cb, *radius, ca, ra, half_extents);
            Some((sd, p, -n))
        }
        (Shape::Box { .. }, Shape::Box { .. }) => None,
    }
}

#[inline]
fn point_velocity(state: &SystemState, i: usize, p: &Vector3<f64>) -> Vector3<f64> {
    let t = &state.object_vels[i];
    t.linear + t.angular.cross(&(p - state.object_poses[i].position))
}

fn other_velocity(state: &SystemState, b: Other, p: &Vector3<f64>) -> Vector3<f64> {
    match b {
        Other::Surface(_) => Vector3::zeros(),
        Other::Robot(r) => state.robot_vel(r),
        Other::Object(j) => point_velocity(state, j, p),
    }
}

#[inline]
fn angular_term(body: &Body, r: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    let rt = r.cross(t);
    rt.dot(&(body.inv_inertia_world * rt))
}

/// Penalty normal forces with a Coulomb-clamped friction force that, where
/// possible, cancels the tangential slip predicted for the end of the step.
fn contact_forces(
    state: &SystemState,
    scene: &SceneSpec,
    bodies: &[Body],
    contacts: &[Contact],
) -> Vec<Vector3<f64>> {
    let dt = scene.dt;
    let g = scene.gravity_vec();
    let n_obj = bodies.len();

    let normal_mag: Vec<f64> = contacts
        .iter()
        .map(|c| {
            let v_rel = point_velocity(state, c.a, &c.point) - other_velocity(state, c.b, &c.point);
            let vn = v_rel.dot(&c.normal);
            (scene.contact_stiffness * c.penetration - scene.contact_damping * vn).max(0.0)
        })
        .collect();

    let mut count = vec![0usize; n_obj];
    let mut force = vec![Vector3::zeros(); n_obj];
    let mut torque = vec![Vector3::zeros(); n_obj];
    for (c, fn_) in contacts.iter().zip(&normal_mag) {
        let f = c.normal * *fn_;
        count[c.a] += 1;
        force[c.a] += f;
        torque[c.a] += (c.point - state.object_poses[c.a].position).cross(&f);
        if let Other::Object(j) = c.b {
            count[j] += 1;
            force[j] -= f;
            torque[j] -= (c.point - state.object_poses[j].position).cross(&f);
        }
    }
    let predicted: Vec<(Vector3<f64>, Vector3<f64>)> = (0..n_obj)
        .map(|i| {
            let tw = &state.object_vels[i];
            let b = &bodies[i];
            let gyro = tw.angular.cross(&rotate_inertia(state, i, b, &tw.angular));
            (
                tw.linear + (force[i] * b.inv_mass + g) * dt,
                tw.angular + b.inv_inertia_world * (torque[i] - gyro) * dt,
            )
        })
        .collect();
    let pred_point_vel = |i: usize, p: &Vector3<f64>| {
        let (v, w) = &predicted[i];
        v + w.cross(&(p - state.object_poses[i].position))
    };

    contacts
        .iter()
        .zip(&normal_mag)
        .map(|(c, fn_)| {
            let mut f = c.normal * *fn_;
            if *fn_ > 0.0 && scene.friction_mu > 0.0 {
                let vb = match c.b {
                    Other::Object(j) => pred_point_vel(j, &c.point),
                    other => other_velocity(state, other, &c.point),
                };
                let v_rel = pred_point_vel(c.a, &c.point) - vb;
                let vt = v_rel - c.normal * v_rel.dot(&c.normal);
                let speed = vt.norm();
                if speed > 1e-12 {
                    let t = vt / speed;
                    let ra = c.point - state.object_poses[c.a].position;
                    let mut inv_m = bodies[c.a].inv_mass + angular_term(&bodies[c.a], &ra, &t);
                    let mut shared = count[c.a];
                    if let Other::Object(j) = c.b {
                        let rb = c.point - state.object_poses[j].position;
                        inv_m += bodies[j].inv_mass + angular_term(&bodies[j], &rb, &t);
                        shared = shared.max(count[j]);
                    }
                    let stop = speed / (inv_m * dt * shared as f64);
                    f -= t * stop.min(scene.friction_mu * fn_);
                }
            }
            f
        })
        .collect()
}

fn rotate_inertia(state: &SystemState, i: usize, b: &Body, w: &Vector3<f64>) -> Vector3<f64> {
    let q = &state.object_poses[i].orientation;
    let local = q.inverse_transform_vector(w);
    q.transform_vector(&local.component_mul(&b.inertia))
}

fn advance_robots(state: &mut SystemState, action: &ActionCommand, scene: &SceneSpec) {
    let dt = scene.dt;
    for (i, robot) in scene.robots.iter().enumerate() {
        let q = state.robot_pos(i);
        let v_cmd = clamp_speed(&action.robot_target_vel[i], robot.max_speed);
        let mut next = q + v_cmd * dt;
        for surf in &scene.static_surfaces {
            let sd = surf.signed_distance(&next) - robot.radius;
            if sd < 0.0 {
                next -= surf.normal * sd;
            }
        }
        let next = robot.clamp(&next);
        let v = clamp_speed(&((next - q) / dt), robot.max_speed);
        state.set_robot_pos(i, &next);
        state.set_robot_vel(i, &v);
    }
}

fn substep(state: &mut SystemState, action: &ActionCommand, scene: &SceneSpec, buf: &mut Vec<Contact>) {
    advance_robots(state, action, scene);
    let bodies = bodies(state, scene);
    collect_contacts(state, scene, buf);
    let forces = contact_forces(state, scene, &bodies, buf);

    let n_obj = scene.objects.len();
    let mut force = vec![Vector3::zeros(); n_obj];
    let mut torque = vec![Vector3::zeros(); n_obj];
    for (c, f) in buf.iter().zip(&forces) {
        force[c.a] += f;
        torque[c.a] += (c.point - state.object_poses[c.a].position).cross(f);
        if let Other::Object(j) = c.b {
            force[j] -= f;
            torque[j] -= (c.point - state.object_poses[j].position).cross(f);
        }
    }
    let dt = scene.dt;
    let g = scene.gravity_vec();
    for i in 0..n_obj {
        let b = &bodies[i];
        let w = state.object_vels[i].angular;
        let gyro = w.cross(&rotate_inertia(state, i, b, &w));
        let tw = &mut state.object_vels[i];
        tw.linear += (force[i] * b.inv_mass + g) * dt;
        tw.angular += b.inv_inertia_world * (torque[i] - gyro) * dt;
        let (v, w) = (tw.linear, tw.angular);
        let pose = &mut state.object_poses[i];
        pose.position += v * dt;
        if !scene.objects[i].is_sphere() {
            pose.orientation = UnitQuaternion::from_scaled_axis(w * dt) * pose.orientation;
            pose.orientation.renormalize();
        }
    }
}

/// Advances `state` by `action.duration` seconds with semi-implicit Euler.
pub fn step(
    state: &SystemState,
    action: &ActionCommand,
    scene: &SceneSpec,
) -> Result<SystemState, PhysicsError> {
    state.check(scene)?;
    if action.robot_target_vel.len() != scene.robots.len()
        || action.robot_target_vel.iter().any(|v| !v.iter().all(|x| x.is_finite()))
    {
        return Err(PhysicsError::InvalidAction("robot command does not match the scene".into()));
    }
    let n = action.substeps(scene.dt)?;
    let mut s = state.clone();
    let mut buf = Vec::with_capacity(16);
    for _ in 0..n {
        substep(&mut s, action, scene, &mut buf);
        let m = s.max_abs();
        if !(m <= DIVERGENCE_LIMIT) {
            return Err(PhysicsError::Diverged);
        }
    }
    Ok(s)
}

/// Folds [`step`] over `actions`, returning the state after each one.
pub fn rollout(
    state: &SystemState,
    actions: &[ActionCommand],
    scene: &SceneSpec,
) -> Result<Vec<SystemState>, PhysicsError> {
    if actions.is_empty() {
        return Err(PhysicsError::InvalidAction("empty action sequence".into()));
    }
    let mut out: Vec<SystemState> = Vec::with_capacity(actions.len());
    for (index, a) in actions.iter().enumerate() {
        let prev = out.last().unwrap_or(state);
        let next = step(prev, a, scene)
            .map_err(|e| PhysicsError::Rollout { index, source: Box::new(e) })?;
        out.push(next);
    }
    Ok(out)
}

/// Minimum signed distance over robot-object, object-object and
/// object-surface pairs. Negative values mean penetration.
pub fn min_separation(state: &SystemState, scene: &SceneSpec) -> f64 {
    let mut best = f64::INFINITY;
    for (a, obj) in scene.objects.iter().enumerate() {
        let pose = &state.object_poses[a];
        for surf in &scene.static_surfaces {
            let d = match &obj.shape {
                Shape::Sphere { radius } => surf.signed_distance(&pose.position) - radius,
                Shape::Box { half_extents } => box_corners_local(half_extents)
                    .iter()
                    .map(|c| surf.signed_distance(&(pose.position + pose.orientation.transform_vector(c))))
                    .fold(f64::INFINITY, f64::min),
            };
            best = best.min(d);
        }
        for (r, robot) in scene.robots.iter().enumerate() {
            let sphere = Shape::Sphere { radius: robot.radius };
            if let Some((d, _, _)) = pair_geometry(
                &obj.shape,
                &pose.position,
                &pose.orientation,
                &sphere,
                &state.robot_pos(r),
                &UnitQuaternion::identity(),
            ) {
                best = best.min(d);
            }
        }
        for b in a + 1..scene.objects.len() {
            let pb = &state.object_poses[b];
            if let Some((d, _, _)) = pair_geometry(
                &obj.shape,
                &pose.position,
                &pose.orientation,
                &scene.objects[b].shape,
                &pb.position,
                &pb.orientation,
            ) {
                best = best.min(d);
            }
        }
    }
    best
}

/// Active contacts and the forces the next integration step would apply.
pub fn contact_report(state: &SystemState, scene: &SceneSpec) -> ContactReport {
    let mut contacts = Vec::new();
    collect_contacts(state, scene, &mut contacts);
    let bodies = bodies(state, scene);
    let forces = contact_forces(state, scene, &bodies, &contacts);
    let pairs = contacts
        .iter()
        .zip(forces)
        .map(|(c, force)| ContactPair {
            body_a: BodyId::Object(c.a),
            body_b: match c.b {
                Other::Surface(s) => BodyId::Surface(s),
                Other::Robot(r) => BodyId::Robot(r),
                Other::Object(o) => BodyId::Object(o),
            },
            point: c.point,
            normal: c.normal,
            penetration: c.penetration,
            force,
        })
        .collect();
    ContactReport { pairs }
}
