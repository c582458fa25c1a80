//! Collision-free trajectory generation for multiple agents in the plane by
//! annealed Langevin sampling from a learned score model, with every sampling
//! step projected onto the feasible set.

pub mod domain;
pub mod error;
pub mod expert;
pub mod feasibility;
pub mod harness;
pub mod projection;
pub mod residuals;
pub mod samplers;
pub mod rng;
pub mod scenario;
pub mod schedule;
pub mod score_model;

pub use domain::{ConstraintSpec, Obstacle, Point, Scenario, TrajectorySet, WorldBounds};
pub use error::{PdmError, Result};
pub use schedule::NoiseSchedule;
