//! Provably safe reinforcement-learning shields.
//!
//! The crate provides the three action-correction mechanisms (replacement,
//! projection, masking), the set-based safety function they rely on, two
//! benchmark environments (inverted pendulum, planar quadrotor), two compact
//! off-policy learners and an experiment harness that records rewards,
//! intervention rates and safety violations.

pub mod env;
mod error;
pub mod geom;
pub mod harness;
pub mod oracle;
pub mod rl;
pub mod safety;
pub mod shields;

pub use error::{Error, Result};
