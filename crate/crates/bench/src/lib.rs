//! Shared setup for the benchmarks.

use std::path::Path;

use coopman::sim::{Overrides, ScenarioConfig};

/// Loads a shipped scenario, shortened to `duration` seconds.
pub fn scenario(name: &str, duration: f64) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    let mut cfg = ScenarioConfig::load(&path).expect("scenario loads");
    cfg.apply(&Overrides { duration: Some(duration), ..Default::default() }).expect("override applies");
    cfg
}
