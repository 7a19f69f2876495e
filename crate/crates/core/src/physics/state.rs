use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{PhysicsError, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn at(position: Vector3<f64>) -> Self {
        Self { position, orientation: UnitQuaternion::identity() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self { linear: Vector3::zeros(), angular: Vector3::zeros() }
    }
}

/// Configuration and velocity of every robot and free object in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Robot positions, three entries per robot.
    pub robot_q: Vec<f64>,
    pub robot_v: Vec<f64>,
    pub object_poses: Vec<Pose>,
    pub object_vels: Vec<Twist>,
}

impl SystemState {
    /// A state at rest with the given robot and object positions.
    pub fn at_rest(robots: &[Vector3<f64>], objects: Vec<Pose>) -> Self {
        let robot_q = robots.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>();
        let n = objects.len();
        Self {
            robot_v: vec![0.0; robot_q.len()],
            robot_q,
            object_poses: objects,
            object_vels: vec![Twist::zero(); n],
        }
    }

    pub fn n_robots(&self) -> usize {
        self.robot_q.len() / 3
    }

    #[inline]
    pub fn robot_pos(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.robot_q[3 * i], self.robot_q[3 * i + 1], self.robot_q[3 * i + 2])
    }

    #[inline]
    pub fn robot_vel(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.robot_v[3 * i], self.robot_v[3 * i + 1], self.robot_v[3 * i + 2])
    }

    pub fn set_robot_pos(&mut self, i: usize, p: &Vector3<f64>) {
        self.robot_q[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
    }

    pub fn set_robot_vel(&mut self, i: usize, v: &Vector3<f64>) {
        self.robot_v[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
    }

    /// Same configuration with every velocity set to zero.
    pub fn at_rest_copy(&self) -> Self {
        let mut s = self.clone();
        s.robot_v.iter_mut().for_each(|v| *v = 0.0);
        s.object_vels.iter_mut().for_each(|t| *t = Twist::zero());
        s
    }

    pub fn is_at_rest(&self) -> bool {
        self.robot_v.iter().all(|v| *v == 0.0)
            && self
                .object_vels
                .iter()
                .all(|t| t.linear.iter().chain(t.angular.iter()).all(|v| *v == 0.0))
    }

    /// Every scalar in the state, in a fixed order.
    pub fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.robot_q
            .iter()
            .chain(self.robot_v.iter())
            .copied()
            .chain(self.object_poses.iter().flat_map(|p| {
                p.position.iter().copied().chain(p.orientation.coords.iter().copied())
            }))
            .chain(
                self.object_vels
                    .iter()
                    .flat_map(|t| t.linear.iter().chain(t.angular.iter()).copied()),
            )
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(f64::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.scalars().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Structural and numeric validity against a scene.
    pub fn check(&self, scene: &SceneSpec) -> Result<(), PhysicsError> {
        if self.robot_q.len() != 3 * scene.robots.len()
            || self.robot_v.len() != self.robot_q.len()
            || self.object_poses.len() != scene.objects.len()
            || self.object_vels.len() != scene.objects.len()
        {
            return Err(PhysicsError::InvalidState("dimensions do not match the scene".into()));
        }
        if !self.is_finite() {
            return Err(PhysicsError::InvalidState("non-finite entry".into()));
        }
        for (i, p) in self.object_poses.iter().enumerate() {
            if (p.orientation.coords.norm() - 1.0).abs() > 1e-9 {
                return Err(PhysicsError::InvalidState(format!(
                    "object {i} orientation is not a unit quaternion"
                )));
            }
        }
        Ok(())
    }
}

/// Commanded robot velocities held for `duration` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub robot_target_vel: Vec<Vector3<f64>>,
    pub duration: f64,
}

impl ActionCommand {
    pub fn zero(n_robots: usize, duration: f64) -> Self {
        Self { robot_target_vel: vec![Vector3::zeros(); n_robots], duration }
    }

    /// Number of integration steps covered by the command.
    pub fn substeps(&self, dt: f64) -> Result<usize, PhysicsError> {
        let steps = (self.duration / dt).round();
        if !(self.duration > 0.0) || steps < 1.0 || (steps * dt - self.duration).abs() > 1e-9 {
            return Err(PhysicsError::InvalidAction(format!(
                "duration {} is not a positive multiple of dt {}",
                self.duration, dt
            )));
        }
        Ok(steps as usize)
    }

    /// Scales each robot's command down to its speed limit.
    pub fn clamped(&self, scene: &SceneSpec) -> Self {
        let robot_target_vel = self
            .robot_target_vel
            .iter()
            .zip(&scene.robots)
            .map(|(v, r)| clamp_speed(v, r.max_speed))
            .collect();
        Self { robot_target_vel, duration: self.duration }
    }
}

#[inline]
pub(crate) fn clamp_speed(v: &Vector3<f64>, max_speed: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max_speed {
        v * (max_speed / n)
    } else {
        *v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum BodyId {
    Object(usize),
    Robot(usize),
    Surface(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPair {
    pub body_a: BodyId,
    pub body_b: BodyId,
    pub point: Vector3<f64>,
    /// Unit normal pointing from `body_b` into `body_a`.
    pub normal: Vector3<f64>,
    pub penetration: f64,
    /// Force applied to `body_a`.
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub pairs: Vec<ContactPair>,
}
