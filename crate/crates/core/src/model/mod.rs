//! Agent, object, grasp and disturbance models and their coupling.

pub mod agent;
pub mod coupled;
pub mod disturbance;
pub mod grasp;
pub mod object;

pub use agent::{AgentKind, AgentModel, Planar3R, PlanarLink, Synthetic6D, TaskTerms, GRAVITY};
pub use coupled::{AgentSnapshot, Coupled, ObjectState, System};
pub use disturbance::{DisturbanceKind, DisturbanceModel};
pub use grasp::{Grasp, LoadShare};
pub use object::ObjectModel;
