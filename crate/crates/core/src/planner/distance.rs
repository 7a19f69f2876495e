use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::physics::{SceneSpec, SystemState};

/// Weights of the squared state metric. Object errors (position and
/// rotation) count more than robot errors; velocities count least.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_obj: f64,
    pub w_rob: f64,
    pub w_vel: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { w_obj: 10.0, w_rob: 1.0, w_vel: 0.1 }
    }
}

/// Geodesic angle between two rotations, in `[0, pi]`. Bitwise symmetric in
/// its arguments and accurate for small angles.
pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let (p, q) = (a.coords, b.coords);
    let q = if p.dot(&q) < 0.0 { -q } else { q };
    4.0 * (p - q).norm().atan2((p + q).norm())
}

/// Weighted squared distance between two states of the same scene:
/// `w_obj (|dpos|^2 + angle^2) + w_rob |dq|^2 + w_vel |dv|^2`.
pub fn weighted_distance(a: &SystemState, b: &SystemState, w: &Weights) -> Result<f64, PlannerError> {
    if a.robot_q.len() != b.robot_q.len()
        || a.robot_v.len() != b.robot_v.len()
        || a.object_poses.len() != b.object_poses.len()
        || a.object_vels.len() != b.object_vels.len()
    {
        return Err(PlannerError::DimensionMismatch);
    }
    Ok(distance_unchecked(a, b, w))
}

/// [`weighted_distance`] for states already known to share a scene.
#[inline]
pub(crate) fn distance_unchecked(a: &SystemState, b: &SystemState, w: &Weights) -> f64 {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut obj = 0.0;
    let mut vel = sq(&a.robot_v, &b.robot_v);
    for (pa, pb) in a.object_poses.iter().zip(&b.object_poses) {
        obj += (pa.position - pb.position).norm_squared();
        if pa.orientation != pb.orientation {
            obj += rotation_angle(&pa.orientation, &pb.orientation).powi(2);
        }
    }
    for (ta, tb) in a.object_vels.iter().zip(&b.object_vels) {
        vel += (ta.linear - tb.linear).norm_squared() + (ta.angular - tb.angular).norm_squared();
    }
    w.w_obj * obj + w.w_rob * sq(&a.robot_q, &b.robot_q) + w.w_vel * vel
}

/// Diameter of a scene's configurations under the square root of the metric:
/// every robot and object spanning the diagonal of the robots' reachable box
/// and every non-spherical object turned by a half revolution.
pub fn scene_diameter(scene: &SceneSpec, w: &Weights) -> f64 {
    let (lo, hi) = scene.extent();
    let diag2 = (hi - lo).norm_squared();
    let objects: f64 = scene
        .objects
        .iter()
        .map(|o| diag2 + if o.is_sphere() { 0.0 } else { std::f64::consts::PI.powi(2) })
        .sum();
    let robots: f64 = scene.robots.iter().map(|r| (r.high() - r.low()).norm_squared()).sum();
    (w.w_obj * objects + w.w_rob * robots).sqrt()
}

/// Default goal radius: 5% of the scene diameter.
pub fn default_epsilon(scene: &SceneSpec, w: &Weights) -> f64 {
    0.05 * scene_diameter(scene, w)
}
