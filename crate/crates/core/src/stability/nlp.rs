//! Residuals and analytic Jacobians of the stable-state program.
//!
//! Decision vector layout: robot positions (3 per robot), then per object its
//! position (3) followed, for boxes, by a quaternion `(w, x, y, z)`, then per
//! contact a point (3) and a force (3). Inequalities are `g(z) <= 0`.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};

use super::{ContactAssignment, ContactVariable};
use crate::physics::{
    geometry::{box_corners_local, box_sdf},
    BodyId, Pose, SceneSpec, Shape, SystemState,
};

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub n_robots: usize,
    pub obj_pos: Vec<usize>,
    pub obj_quat: Vec<Option<usize>>,
    pub contacts: usize,
    pub n_contacts: usize,
    pub n: usize,
    /// Number of configuration entries (everything before the contacts).
    pub n_config: usize,
}

impl Layout {
    pub fn new(scene: &SceneSpec, n_contacts: usize) -> Self {
        let n_robots = scene.robots.len();
        let mut at = 3 * n_robots;
        let mut obj_pos = Vec::new();
        let mut obj_quat = Vec::new();
        for o in &scene.objects {
            obj_pos.push(at);
            at += 3;
            if o.is_sphere() {
                obj_quat.push(None);
            } else {
                obj_quat.push(Some(at));
                at += 4;
            }
        }
        let n_config = at;
        Self { n_robots, obj_pos, obj_quat, contacts: at, n_contacts, n: at + 6 * n_contacts, n_config }
    }

    #[inline]
    pub fn robot(&self, i: usize) -> usize {
        3 * i
    }
    #[inline]
    pub fn point(&self, c: usize) -> usize {
        self.contacts + 6 * c
    }
    #[inline]
    pub fn force(&self, c: usize) -> usize {
        self.contacts + 6 * c + 3
    }

    pub fn pack(&self, config: &SystemState, vars: &[ContactVariable]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        z[..3 * self.n_robots].copy_from_slice(&config.robot_q);
        for (o, pose) in config.object_poses.iter().enumerate() {
            put3(&mut z, self.obj_pos[o], &pose.position);
            if let Some(qi) = self.obj_quat[o] {
                let q = pose.orientation.quaternion();
                z[qi..qi + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
            }
        }
        for (c, v) in vars.iter().enumerate() {
            put3(&mut z, self.point(c), &v.point);
            put3(&mut z, self.force(c), &v.force);
        }
        z
    }

    /// Configuration at rest; box quaternions are normalized.
    pub fn config(&self, z: &[f64]) -> SystemState {
        let robots: Vec<Vector3<f64>> = (0..self.n_robots).map(|i| get3(z, self.robot(i))).collect();
        let poses = (0..self.obj_pos.len())
            .map(|o| Pose {
                position: get3(z, self.obj_pos[o]),
                orientation: match self.obj_quat[o] {
                    Some(qi) => UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        z[qi],
                        z[qi + 1],
                        z[qi + 2],
                        z[qi + 3],
                    )),
                    None => UnitQuaternion::identity(),
                },
            })
            .collect();
        SystemState::at_rest(&robots, poses)
    }

    pub fn vars(&self, z: &[f64]) -> Vec<ContactVariable> {
        (0..self.n_contacts)
            .map(|c| ContactVariable { point: get3(z, self.point(c)), force: get3(z, self.force(c)) })
            .collect()
    }
}

#[inline]
pub(crate) fn get3(z: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(z[i], z[i + 1], z[i + 2])
}

#[inline]
fn put3(z: &mut [f64], i: usize, v: &Vector3<f64>) {
    z[i..i + 3].copy_from_slice(v.as_slice());
}

/// Rotation matrix of a (not necessarily normalized) quaternion `(w, x, y, z)`
/// using the unit-quaternion polynomial, and its partial derivatives.
fn rot_and_grad(q: &[f64]) -> (Matrix3<f64>, [Matrix3<f64>; 4]) {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let r = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    (r, [dw, dx, dy, dz])
}

#[inline]
fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    v.cross_matrix()
}

/// One residual row: value plus sparse gradient.
#[derive(Debug, Default, Clone)]
struct Row {
    value: f64,
    grad: Vec<(usize, f64)>,
}

impl Row {
    fn new(value: f64) -> Self {
        Self { value, grad: Vec::with_capacity(12) }
    }
    fn add3(&mut self, at: usize, g: &Vector3<f64>) {
        for k in 0..3 {
            self.grad.push((at + k, g[k]));
        }
    }
    fn add(&mut self, at: usize, g: f64) {
        self.grad.push((at, g));
    }
}

/// Edge radius of boxes inside the program. Rounded edges keep the anchoring
/// residual differentiable on the whole box surface; faces are unchanged.
pub(crate) const BOX_ROUNDING: f64 = 0.002;

/// Minimum gap between bodies that are not assigned a contact: twice the
/// sinkage of the heaviest object resting on a single penalty contact.
pub(crate) fn unassigned_gap(scene: &SceneSpec) -> f64 {
    let heaviest = scene.objects.iter().fold(0.0f64, |m, o| m.max(o.mass));
    (2.0 * heaviest * scene.gravity / scene.contact_stiffness).max(2e-4)
}

fn core_extents(h: &Vector3<f64>) -> Vector3<f64> {
    h.map(|v| (v - BOX_ROUNDING).max(0.0))
}

/// A body's geometry evaluated at the current iterate.
enum Geo {
    Plane { n: Vector3<f64>, d: f64 },
    Sphere { c: Vector3<f64>, at: usize, r: f64 },
    Box { c: Vector3<f64>, at: usize, qat: usize, r: Matrix3<f64>, dr: [Matrix3<f64>; 4], h: Vector3<f64> },
}

impl Geo {
    /// Residual of `p` lying on the body's surface.
    fn anchor(&self, p: &Vector3<f64>, pat: usize) -> Row {
        match self {
            Geo::Plane { n, d } => {
                let mut row = Row::new(n.dot(p) - d);
                row.add3(pat, n);
                row
            }
            Geo::Sphere { c, at, r } => {
                let u = p - c;
                let l = u.norm().max(1e-12);
                let g = u / l;
                let mut row = Row::new(l - r);
                row.add3(pat, &g);
                row.add3(*at, &-g);
                row
            }
            Geo::Box { c, at, qat, r, dr, h } => {
                let rel = p - c;
                let local = r.transpose() * rel;
                let (sd, g) = box_sdf(&local, &core_extents(h));
                let gw = r * g;
                let mut row = Row::new(sd - BOX_ROUNDING);
                row.add3(pat, &gw);
                row.add3(*at, &-gw);
                for k in 0..4 {
                    row.add(qat + k, g.dot(&(dr[k].transpose() * rel)));
                }
                row
            }
        }
    }

    /// Non-penetration rows `-(signed distance) <= 0` of a sphere against this body.
    fn sphere_clearance(&self, c_s: &Vector3<f64>, at_s: usize, r_s: f64, out: &mut Vec<Row>) {
        match self {
            Geo::Plane { n, d } => {
                let mut row = Row::new(-(n.dot(c_s) - d - r_s));
                row.add3(at_s, &-n);
                out.push(row);
            }
            Geo::Sphere { c, at, r } => {
                let u = c_s - c;
                let l = u.norm().max(1e-12);
                let g = u / l;
                let mut row = Row::new(-(l - r - r_s));
                row.add3(at_s, &-g);
                row.add3(*at, &g);
                out.push(row);
            }
            Geo::Box { .. } => {
                let mut row = self.anchor(c_s, at_s);
                row.value = -(row.value - r_s);
                row.grad.iter_mut().for_each(|(_, g)| *g = -*g);
                out.push(row);
            }
        }
    }
}

fn object_geo(scene: &SceneSpec, layout: &Layout, z: &[f64], o: usize) -> Geo {
    let at = layout.obj_pos[o];
    let c = get3(z, at);
    match &scene.objects[o].shape {
        Shape::Sphere { radius } => Geo::Sphere { c, at, r: *radius },
        Shape::Box { half_extents } => {
            let qat = layout.obj_quat[o].expect("box has a quaternion");
            let (r, dr) = rot_and_grad(&z[qat..qat + 4]);
            Geo::Box { c, at, qat, r, dr, h: *half_extents }
        }
    }
}

fn body_geo(scene: &SceneSpec, layout: &Layout, z: &[f64], b: BodyId) -> Geo {
    match b {
        BodyId::Surface(s) => {
            let hs = &scene.static_surfaces[s];
            Geo::Plane { n: hs.normal, d: hs.offset }
        }
        BodyId::Robot(r) => {
            let at = layout.robot(r);
            Geo::Sphere { c: get3(z, at), at, r: scene.robots[r].radius }
        }
        BodyId::Object(o) => object_geo(scene, layout, z, o),
    }
}

/// Contact normal (direction of the force on object `a`) as `u / |u|`, where
/// `u` is a difference of two points; returns `n`, `dn/du` and the decision
/// slices `u` depends on with their signs.
struct Normal {
    n: Vector3<f64>,
    dn_du: Matrix3<f64>,
    deps: Vec<(usize, f64)>,
}

fn contact_normal(
    scene: &SceneSpec,
    layout: &Layout,
    z: &[f64],
    a: usize,
    b: BodyId,
    c: usize,
) -> Normal {
    let p_at = layout.point(c);
    let p = get3(z, p_at);
    let from_diff = |u: Vector3<f64>, deps: Vec<(usize, f64)>| {
        let l = u.norm().max(1e-12);
        let n = u / l;
        Normal { n, dn_du: (Matrix3::identity() - n * n.transpose()) / l, deps }
    };
    match b {
        BodyId::Surface(s) => {
            Normal { n: scene.static_surfaces[s].normal, dn_du: Matrix3::zeros(), deps: vec![] }
        }
        BodyId::Robot(r) => {
            let at = layout.robot(r);
            from_diff(p - get3(z, at), vec![(p_at, 1.0), (at, -1.0)])
        }
        BodyId::Object(o) if scene.objects[o].is_sphere() => {
            let at = layout.obj_pos[o];
            from_diff(p - get3(z, at), vec![(p_at, 1.0), (at, -1.0)])
        }
        BodyId::Object(_) => {
            let at = layout.obj_pos[a];
            from_diff(get3(z, at) - p, vec![(at, 1.0), (p_at, -1.0)])
        }
    }
}

/// Residual values with optional dense Jacobians.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub jeq: DMatrix<f64>,
    pub jineq: DMatrix<f64>,
}

/// Form of the friction-cone rows: `|f_t| - mu f_n` or the smooth
/// `|f_t|^2 - mu^2 f_n^2`, which has the same feasible set together with
/// `f_n >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cone {
    Exact,
    Squared,
}

pub(crate) struct Problem<'a> {
    pub scene: &'a SceneSpec,
    pub assignment: &'a ContactAssignment,
    pub layout: Layout,
    pub cone: Cone,
}

impl<'a> Problem<'a> {
    pub fn new(scene: &'a SceneSpec, assignment: &'a ContactAssignment) -> Self {
        let layout = Layout::new(scene, assignment.contacts.len());
        Self { scene, assignment, layout, cone: Cone::Exact }
    }

    fn rows(&self, z: &[f64]) -> (Vec<Row>, Vec<Row>) {
        let scene = self.scene;
        let l = &self.layout;
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        let g = scene.gravity_vec();

        // Quasi-static balance of every free object.
        for (o, obj) in scene.objects.iter().enumerate() {
            let co = get3(z, l.obj_pos[o]);
            let mut force = [Row::new(0.0), Row::new(0.0), Row::new(0.0)];
            let mut moment = [Row::new(0.0), Row::new(0.0), Row::new(0.0)];
            for k in 0..3 {
                force[k].value = obj.mass * g[k];
            }
            for (c, (a, b)) in self.assignment.contacts.iter().enumerate() {
                let sign = if *a == BodyId::Object(o) {
                    1.0
                } else if *b == BodyId::Object(o) {
                    -1.0
                } else {
                    continue;
                };
                let p = get3(z, l.point(c));
                let f = get3(z, l.force(c)) * sign;
                let arm = p - co;
                let m = arm.cross(&f);
                // d(arm x f)/df = [arm]x, d/dp = -[f]x, d/dc = [f]x
                let d_df = skew(&arm) * sign;
                let d_dp = -skew(&f);
                for k in 0..3 {
                    force[k].value += f[k];
                    force[k].add(l.force(c) + k, sign);
                    moment[k].value += m[k];
                    for j in 0..3 {
                        moment[k].add(l.force(c) + j, d_df[(k, j)]);
                        moment[k].add(l.point(c) + j, d_dp[(k, j)]);
                        moment[k].add(l.obj_pos[o] + j, -d_dp[(k, j)]);
                    }
                }
            }
            eq.extend(force);
            eq.extend(moment);
        }

        // Contact points lie on both surfaces; forces lie in the friction cone.
        let mu = scene.friction_mu;
        for (c, (a, b)) in self.assignment.contacts.iter().enumerate() {
            let BodyId::Object(ai) = *a else { unreachable!("validated assignment") };
            let p_at = l.point(c);
            let p = get3(z, p_at);
            eq.push(object_geo(scene, l, z, ai).anchor(&p, p_at));
            eq.push(body_geo(scene, l, z, *b).anchor(&p, p_at));

            let nrm = contact_normal(scene, l, z, ai, *b, c);
            let f_at = l.force(c);
            let f = get3(z, f_at);
            let fn_ = f.dot(&nrm.n);
            let ft = (f - nrm.n * fn_).norm();
            let (gf_t, gn_t) = if ft > 1e-12 {
                let ftv = f - nrm.n * fn_;
                (ftv / ft, -f * (fn_ / ft))
            } else {
                (Vector3::zeros(), Vector3::zeros())
            };
            let (mut cone, gu) = match self.cone {
                Cone::Exact => {
                    let mut row = Row::new(ft - mu * fn_);
                    row.add3(f_at, &(gf_t - nrm.n * mu));
                    (row, nrm.dn_du * (gn_t - f * mu))
                }
                Cone::Squared => {
                    let k = 1.0 + mu * mu;
                    let mut row = Row::new(ft * ft - mu * mu * fn_ * fn_);
                    row.add3(f_at, &((f - nrm.n * (k * fn_)) * 2.0));
                    (row, nrm.dn_du * (f * (-2.0 * k * fn_)))
                }
            };
            for (at, s) in &nrm.deps {
                cone.add3(*at, &(gu * *s));
            }
            ineq.push(cone);

            let mut unilateral = Row::new(-fn_);
            unilateral.add3(f_at, &-nrm.n);
            let gu = nrm.dn_du * -f;
            for (at, s) in &nrm.deps {
                unilateral.add3(*at, &(gu * *s));
            }
            ineq.push(unilateral);
        }

        // Unit quaternions.
        for qat in l.obj_quat.iter().flatten() {
            let q = &z[*qat..*qat + 4];
            let mut row = Row::new(q.iter().map(|v| v * v).sum::<f64>() - 1.0);
            for k in 0..4 {
                row.add(qat + k, 2.0 * q[k]);
            }
            eq.push(row);
        }

        // Collision-free configuration.
        let contacts = &self.assignment.contacts;
        let gap = unassigned_gap(scene);
        let gap_from = |ineq: &mut Vec<Row>, from: usize, a: BodyId, b: BodyId| {
            if !contacts.contains(&(a, b)) {
                ineq[from..].iter_mut().for_each(|row| row.value += gap);
            }
        };
        for o in 0..scene.objects.len() {
            let geo = object_geo(scene, l, z, o);
            let me = BodyId::Object(o);
            for (si, surf) in scene.static_surfaces.iter().enumerate() {
                let from = ineq.len();
                match &geo {
                    Geo::Box { c, at, qat, r, dr, h } => {
                        for corner in box_corners_local(&core_extents(h)) {
                            let x = c + r * corner;
                            let mut row = Row::new(-(surf.normal.dot(&x) - surf.offset - BOX_ROUNDING));
                            row.add3(*at, &-surf.normal);
                            for k in 0..4 {
                                row.add(qat + k, -surf.normal.dot(&(dr[k] * corner)));
                            }
                            ineq.push(row);
                        }
                    }
                    Geo::Sphere { c, at, r } => {
                        Geo::Plane { n: surf.normal, d: surf.offset }.sphere_clearance(c, *at, *r, &mut ineq)
                    }
                    Geo::Plane { .. } => unreachable!(),
                }
                gap_from(&mut ineq, from, me, BodyId::Surface(si));
            }
            for (ri, robot) in scene.robots.iter().enumerate() {
                let at = l.robot(ri);
                let from = ineq.len();
                geo.sphere_clearance(&get3(z, at), at, robot.radius, &mut ineq);
                gap_from(&mut ineq, from, me, BodyId::Robot(ri));
            }
            for (ob, other) in scene.objects.iter().enumerate().skip(o + 1) {
                let from = ineq.len();
                match (&geo, &other.shape) {
                    (_, Shape::Sphere { radius }) => {
                        let at = l.obj_pos[ob];
                        geo.sphere_clearance(&get3(z, at), at, *radius, &mut ineq);
                    }
                    (Geo::Sphere { c, at, r }, Shape::Box { .. }) => {
                        object_geo(scene, l, z, ob).sphere_clearance(c, *at, *r, &mut ineq);
                    }
                    _ => {}
                }
                gap_from(&mut ineq, from, me, BodyId::Object(ob));
            }
        }
        for (ri, robot) in scene.robots.iter().enumerate() {
            let at = l.robot(ri);
            let q = get3(z, at);
            for surf in &scene.static_surfaces {
                Geo::Plane { n: surf.normal, d: surf.offset }.sphere_clearance(&q, at, robot.radius, &mut ineq);
            }
            for k in 0..3 {
                let [lo, hi] = robot.position_limits[k];
                let mut low = Row::new(lo - q[k]);
                low.add(at + k, -1.0);
                ineq.push(low);
                let mut high = Row::new(q[k] - hi);
                high.add(at + k, 1.0);
                ineq.push(high);
            }
        }
        (eq, ineq)
    }

    pub fn values(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (eq, ineq) = self.rows(z);
        (eq.iter().map(|r| r.value).collect(), ineq.iter().map(|r| r.value).collect())
    }

    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        let (eq, ineq) = self.rows(z);
        let dense = |rows: &[Row]| {
            let mut m = DMatrix::zeros(rows.len(), self.layout.n);
            for (i, r) in rows.iter().enumerate() {
                for (j, g) in &r.grad {
                    m[(i, *j)] += g;
                }
            }
            m
        };
        Evaluation {
            jeq: dense(&eq),
            jineq: dense(&ineq),
            eq: eq.into_iter().map(|r| r.value).collect(),
            ineq: ineq.into_iter().map(|r| r.value).collect(),
        }
    }
}
