//! Deterministic 2D traffic simulation and near-miss guided scenario fuzzing.
//!
//! A failure-free run of a seed scenario is recorded as a [`Trace`]. The
//! [`forecaster`] ranks NPCs that came close to causing a collision, the
//! [`clipper`] cuts a short runnable scenario around each risky point, and the
//! [`mutator`] derives children by swapping NPC models or perturbing their
//! steering. [`campaign`] runs this pipeline and the baseline strategies over
//! scenario suites and tallies the failures found.

pub mod campaign;
pub mod clipper;
pub mod error;
pub mod forecaster;
pub mod geom;
pub mod kinematics;
pub mod library;
pub mod map;
pub mod model;
pub mod mutator;
pub mod scenario;
pub mod sim;
pub mod telemetry;
#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
pub use model::{ActorClass, ActorId, ActorModel};
pub use scenario::Scenario;
pub use sim::{run, FailureType, Outcome, OutcomeKind};
pub use telemetry::Trace;
