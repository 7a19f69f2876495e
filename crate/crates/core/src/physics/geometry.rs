//! Closed-form distance queries for spheres, boxes and half-spaces.

use nalgebra::{UnitQuaternion, Vector3};

/// The eight corners of a box in its local frame, in a fixed order.
pub fn box_corners_local(h: &Vector3<f64>) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
        *c = Vector3::new(sx * h.x, sy * h.y, sz * h.z);
    }
    out
}

/// Signed distance from a local-frame point to the surface of a box centered
/// at the origin, with its gradient. Negative inside.
pub fn box_sdf(q: &Vector3<f64>, h: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = q.abs() - h;
    let outside = d.sup(&Vector3::zeros());
    let out_norm = outside.norm();
    if out_norm > 0.0 {
        let g = Vector3::new(
            outside.x * q.x.signum(),
            outside.y * q.y.signum(),
            outside.z * q.z.signum(),
        ) / out_norm;
        (out_norm, g)
    } else {
        let (axis, dmax) = d.argmax();
        let mut g = Vector3::zeros();
        g[axis] = if q[axis] >= 0.0 { 1.0 } else { -1.0 };
        (dmax, g)
    }
}

/// Closest point on (or in) the box to a local-frame point, with the outward
/// unit normal and signed distance. For interior points the nearest face is used.
pub fn box_closest(q: &Vector3<f64>, h: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
    let clamped = Vector3::new(
        q.x.clamp(-h.x, h.x),
        q.y.clamp(-h.y, h.y),
        q.z.clamp(-h.z, h.z),
    );
    let diff = q - clamped;
    let dist = diff.norm();
    if dist > 1e-12 {
        (clamped, diff / dist, dist)
    } else {
        let d = q.abs() - h;
        let (axis, dmax) = d.argmax();
        let mut n = Vector3::zeros();
        n[axis] = if q[axis] >= 0.0 { 1.0 } else { -1.0 };
        let mut p = *q;
        p[axis] = n[axis] * h[axis];
        (p, n, dmax)
    }
}

/// Signed distance between a sphere and a posed box, with the closest box
/// point and the world-frame outward box normal at that point.
pub fn sphere_box(
    center: &Vector3<f64>,
    radius: f64,
    box_pos: &Vector3<f64>,
    box_rot: &UnitQuaternion<f64>,
    h: &Vector3<f64>,
) -> (f64, Vector3<f64>, Vector3<f64>) {
    let local = box_rot.inverse_transform_vector(&(center - box_pos));
    let (p, n, d) = box_closest(&local, h);
    (d - radius, box_pos + box_rot.transform_vector(&p), box_rot.transform_vector(&n))
}
