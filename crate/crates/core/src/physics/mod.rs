//! Deterministic rigid-body simulator for sphere robots pushing spheres and
//! boxes around half-space scenes.
//!
//! Robots are kinematic: they follow their commanded velocity, clamped to a
//! speed limit, projected out of static surfaces and clamped to their
//! position limits. Free objects integrate gravity plus penalty contact forces
//! (spring-damper normal, Coulomb-clamped friction) with semi-implicit Euler.
//! [`step`] and [`rollout`] are pure functions of their inputs.

pub mod geometry;
mod scene;
mod sim;
mod state;

pub use scene::{
    sphere_floor, spheres_cube, spheres_ramp, HalfSpace, ObjectSpec, RobotSpec, SceneSpec, Shape,
    BUILTIN_SCENES, RAMP_INCLINE_DEG,
};
pub use sim::{contact_report, min_separation, rollout, step, DIVERGENCE_LIMIT};
pub use state::{
    ActionCommand, BodyId, ContactPair, ContactReport, Pose, SystemState, Twist,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("simulation diverged")]
    Diverged,
    #[error("action {index} failed: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: Box<PhysicsError>,
    },
}

/// Default duration of one planner action, in seconds.
pub const DEFAULT_ACTION_DURATION: f64 = 0.25;
