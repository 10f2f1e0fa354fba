//! Closed-loop simulation, scenarios, telemetry and metrics.

pub mod bounds;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod telemetry;
pub mod trajectory;

pub use config::{ControllerKind, Hold, Overrides, ScenarioConfig};
pub use metrics::{metrics, Metrics, SignalStats};
pub use runner::{run_scenario, Outcome, RunReport, SimState, Simulation};
pub use trajectory::{AxisSinusoid, Shape, TrajectoryConfig, TrajectorySample};
