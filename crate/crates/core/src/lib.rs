//! Stability-guided exploration of contact-rich manipulation trajectories.
//!
//! A kinodynamic search tree is grown through black-box simulation towards a
//! fixed, pre-sampled set of physically stable states. The crate contains the
//! simulator, the stable-state sampler, the planner, evaluation metrics,
//! baselines and the experiment harness behind the `stage` binary.

pub mod baselines;
pub mod harness;
pub mod metrics;
pub mod physics;
pub mod planner;
pub mod rng;
pub mod stability;
