//! Simulation and control of N robotic agents rigidly grasping a common object.
//!
//! The crate provides the spatial algebra ([`spatial`]), the agent, object and
//! coupled dynamics ([`model`]), two decentralized controllers
//! ([`ctrl_adaptive`], [`ctrl_ppc`]) and a deterministic closed-loop
//! simulator with a scenario library ([`sim`]).

pub mod ctrl_adaptive;
pub mod ctrl_ppc;
pub mod error;
pub mod model;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};
pub use spatial::{EulerAngles, Twist, UnitQuaternion, Wrench};
