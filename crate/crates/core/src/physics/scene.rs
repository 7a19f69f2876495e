use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PhysicsError;

/// A static half-space `{ p : normal · p >= offset }`. Free space lies on the
/// side the normal points to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed distance of a point to the surface; negative inside the solid.
    #[inline]
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Translational sphere robot driven by kinematic velocity commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub radius: f64,
    /// `[low, high]` per axis.
    pub position_limits: [[f64; 2]; 3],
    pub max_speed: f64,
}

impl RobotSpec {
    pub fn low(&self) -> Vector3<f64> {
        Vector3::new(
            self.position_limits[0][0],
            self.position_limits[1][0],
            self.position_limits[2][0],
        )
    }

    pub fn high(&self) -> Vector3<f64> {
        Vector3::new(
            self.position_limits[0][1],
            self.position_limits[1][1],
            self.position_limits[2][1],
        )
    }

    pub fn clamp(&self, q: &Vector3<f64>) -> Vector3<f64> {
        let (lo, hi) = (self.low(), self.high());
        Vector3::new(
            q.x.clamp(lo.x, hi.x),
            q.y.clamp(lo.y, hi.y),
            q.z.clamp(lo.z, hi.z),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vector3<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub mass: f64,
}

impl ObjectSpec {
    pub fn is_sphere(&self) -> bool {
        matches!(self.shape, Shape::Sphere { .. })
    }

    /// Principal moments of inertia about the center of mass, body frame.
    pub fn inertia_diag(&self) -> Vector3<f64> {
        match &self.shape {
            Shape::Sphere { radius } => Vector3::repeat(0.4 * self.mass * radius * radius),
            Shape::Box { half_extents: h } => {
                let (x2, y2, z2) = (h.x * h.x, h.y * h.y, h.z * h.z);
                Vector3::new(y2 + z2, x2 + z2, x2 + y2) * (self.mass / 3.0)
            }
        }
    }

    /// Radius of the smallest sphere enclosing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match &self.shape {
            Shape::Sphere { radius } => *radius,
            Shape::Box { half_extents } => half_extents.norm(),
        }
    }
}

/// Full description of a simulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub static_surfaces: Vec<HalfSpace>,
    pub robots: Vec<RobotSpec>,
    pub objects: Vec<ObjectSpec>,
    pub friction_mu: f64,
    /// Magnitude of gravity, acting along -z.
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub dt: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
}

fn default_gravity() -> f64 {
    9.81
}

pub const BUILTIN_SCENES: [&str; 2] = ["spheres_ramp", "spheres_cube"];

impl SceneSpec {
    pub fn gravity_vec(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |msg: String| Err(PhysicsError::InvalidScene(msg));
        for (i, s) in self.static_surfaces.iter().enumerate() {
            if !s.offset.is_finite() || (s.normal.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("surface {i} normal is not unit length"));
            }
        }
        for (i, r) in self.robots.iter().enumerate() {
            if !(r.radius > 0.0) || !(r.max_speed > 0.0) {
                return bad(format!("robot {i} radius and max speed must be positive"));
            }
            for (axis, lim) in r.position_limits.iter().enumerate() {
                if !(lim[0] < lim[1]) {
                    return bad(format!("robot {i} limits on axis {axis} are not ordered"));
                }
            }
        }
        let mut boxes = 0;
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.mass > 0.0) {
                return bad(format!("object {i} mass must be positive"));
            }
            match &o.shape {
                Shape::Sphere { radius } if !(*radius > 0.0) => {
                    return bad(format!("object {i} radius must be positive"))
                }
                Shape::Box { half_extents } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                    return bad(format!("object {i} half extents must be positive"))
                }
                Shape::Box { .. } => boxes += 1,
                _ => {}
            }
        }
        if boxes > 1 {
            return bad("box-box contact is not supported".into());
        }
        if !(self.dt > 0.0) || !(self.contact_stiffness > 0.0) || !(self.contact_damping >= 0.0) {
            return bad("dt and contact stiffness must be positive".into());
        }
        if !(self.friction_mu >= 0.0) || !self.gravity.is_finite() {
            return bad("friction and gravity must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Axis-aligned box enclosing all robot position limits: `(low, high)`.
    pub fn extent(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for r in &self.robots {
            lo = lo.inf(&r.low());
            hi = hi.sup(&r.high());
        }
        if self.robots.is_empty() {
            lo = Vector3::repeat(-1.0);
            hi = Vector3::repeat(1.0);
        }
        (lo, hi)
    }

    /// The extent box grown about its center by `factor`.
    pub fn scaled_extent(&self, factor: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (lo, hi) = self.extent();
        let c = (lo + hi) * 0.5;
        let h = (hi - lo) * (0.5 * factor);
        (c - h, c + h)
    }

    pub fn builtin(name: &str) -> Option<SceneSpec> {
        match name {
            "spheres_ramp" => Some(spheres_ramp()),
            "spheres_cube" => Some(spheres_cube()),
            _ => None,
        }
    }
}

/// Ramp incline in degrees for `spheres_ramp`.
pub const RAMP_INCLINE_DEG: f64 = 15.0;

/// One sphere robot pushing a sphere on a 15° ramp between two walls. The ramp
/// descends along +x without end, so a sphere that gets away rolls off for good.
pub fn spheres_ramp() -> SceneSpec {
    let a = RAMP_INCLINE_DEG.to_radians();
    SceneSpec {
        static_surfaces: vec![
            HalfSpace::new(Vector3::new(a.sin(), 0.0, a.cos()), 0.0),
            HalfSpace::new(Vector3::new(0.0, 1.0, 0.0), -0.3),
            HalfSpace::new(Vector3::new(0.0, -1.0, 0.0), -0.3),
        ],
        robots: vec![RobotSpec {
            radius: 0.05,
            position_limits: [[-0.6, 0.6], [-0.25, 0.25], [-0.2, 0.35]],
            max_speed: 1.0,
        }],
        objects: vec![ObjectSpec { shape: Shape::Sphere { radius: 0.08 }, mass: 1.0 }],
        friction_mu: 0.5,
        gravity: 9.81,
        dt: 0.01,
        contact_stiffness: 1e4,
        contact_damping: 50.0,
    }
}

/// Two sphere robots and a cube on a flat floor between two walls.
pub fn spheres_cube() -> SceneSpec {
    let robot = RobotSpec {
        radius: 0.04,
        position_limits: [[-0.4, 0.4], [-0.3, 0.3], [0.04, 0.5]],
        max_speed: 1.0,
    };
    SceneSpec {
        static_surfaces: vec![
            HalfSpace::new(Vector3::new(0.0, 0.0, 1.0), 0.0),
            HalfSpace::new(Vector3::new(1.0, 0.0, 0.0), -0.4),
            HalfSpace::new(Vector3::new(-1.0, 0.0, 0.0), -0.4),
        ],
        robots: vec![robot.clone(), robot],
        objects: vec![ObjectSpec {
            shape: Shape::Box { half_extents: Vector3::repeat(0.06) },
            mass: 4.0,
        }],
        friction_mu: 0.5,
        gravity: 9.81,
        dt: 0.01,
        contact_stiffness: 1e4,
        contact_damping: 50.0,
    }
}

/// A single robot and a sphere on a flat floor; small scene for tests and demos.
pub fn sphere_floor() -> SceneSpec {
    SceneSpec {
        static_surfaces: vec![HalfSpace::new(Vector3::new(0.0, 0.0, 1.0), 0.0)],
        robots: vec![RobotSpec {
            radius: 0.05,
            position_limits: [[-0.5, 0.5], [-0.5, 0.5], [0.05, 0.4]],
            max_speed: 1.0,
        }],
        objects: vec![ObjectSpec { shape: Shape::Sphere { radius: 0.1 }, mass: 1.0 }],
        friction_mu: 0.5,
        gravity: 9.81,
        dt: 0.01,
        contact_stiffness: 1e4,
        contact_damping: 50.0,
    }
}
