//! Performance functions, funnel specifications and the error transformation.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `rho(t) = (rho_0 - rho_inf) exp(-decay t) + rho_inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceFunction {
    pub rho_0: f64,
    pub rho_inf: f64,
    pub decay: f64,
}

impl PerformanceFunction {
    pub fn new(rho_0: f64, rho_inf: f64, decay: f64) -> Result<Self> {
        let f = Self { rho_0, rho_inf, decay };
        f.validate("funnel")?;
        Ok(f)
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.rho_inf > 0.0 && self.rho_inf < self.rho_0 && self.rho_0.is_finite()) {
            return Err(Error::config(key, format!("need 0 < rho_inf < rho_0 (got rho_0 = {}, rho_inf = {})", self.rho_0, self.rho_inf)));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::config(key, "decay must be positive"));
        }
        Ok(())
    }

    /// Value and time derivative.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let span = self.rho_0 - self.rho_inf;
        let w = (-self.decay * t).exp();
        (span * w + self.rho_inf, -self.decay * span * w)
    }

    /// `max |rho_dot| = decay (rho_0 - rho_inf)`.
    pub fn max_rate(&self) -> f64 {
        self.decay * (self.rho_0 - self.rho_inf)
    }
}

/// Per-axis envelopes; `None` marks an axis outside the motion plane.
#[derive(Clone, Debug, PartialEq)]
pub struct FunnelSet {
    pub axes: [Option<PerformanceFunction>; 6],
}

impl FunnelSet {
    /// Values and rates; inactive axes report `rho = 1`, `rho_dot = 0`.
    pub fn eval(&self, t: f64) -> (Vector6<f64>, Vector6<f64>) {
        let mut rho = Vector6::repeat(1.0);
        let mut rate = Vector6::zeros();
        for (k, f) in self.axes.iter().enumerate() {
            if let Some(f) = f {
                (rho[k], rate[k]) = f.eval(t);
            }
        }
        (rho, rate)
    }

    fn fold(&self, init: f64, f: impl Fn(f64, &PerformanceFunction) -> f64) -> f64 {
        self.axes.iter().flatten().fold(init, f)
    }

    pub fn max_rho_0(&self) -> f64 {
        self.fold(0.0, |m, f| m.max(f.rho_0))
    }

    pub fn min_rho_inf(&self) -> f64 {
        self.fold(f64::INFINITY, |m, f| m.min(f.rho_inf))
    }

    pub fn max_rate(&self) -> f64 {
        self.fold(0.0, |m, f| m.max(f.max_rate()))
    }
}

/// Normalized error `xi = e / rho`, transformed error `eps` and slope `r = d eps / d xi`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunnelState {
    pub rho: Vector6<f64>,
    pub rho_dot: Vector6<f64>,
    pub xi: Vector6<f64>,
    pub eps: Vector6<f64>,
    pub r: Vector6<f64>,
}

impl FunnelState {
    /// `rho^-1 r eps`, the common feedback term.
    pub fn feedback(&self) -> Vector6<f64> {
        self.r.component_mul(&self.eps).component_div(&self.rho)
    }
}

/// `ln((1 + xi) / (1 - xi))`.
pub fn transformed(xi: f64) -> f64 {
    ((1.0 + xi) / (1.0 - xi)).ln()
}

/// `2 / (1 - xi^2)`.
pub fn slope(xi: f64) -> f64 {
    2.0 / (1.0 - xi * xi)
}

/// Maps an error into funnel coordinates; `|xi| >= 1` on an active axis is a violation.
pub fn transform(e: &Vector6<f64>, funnels: &FunnelSet, t: f64, funnel: &'static str) -> Result<FunnelState> {
    let (rho, rho_dot) = funnels.eval(t);
    let mut xi = Vector6::zeros();
    let mut eps = Vector6::zeros();
    let mut r = Vector6::repeat(2.0);
    for k in 0..6 {
        if funnels.axes[k].is_none() {
            continue;
        }
        let x = e[k] / rho[k];
        if !(x.abs() < 1.0) {
            return Err(Error::FunnelViolation {
                funnel,
                axis: k,
                t,
                error: e[k].abs(),
                bound: rho[k],
            });
        }
        xi[k] = x;
        eps[k] = transformed(x);
        r[k] = slope(x);
    }
    Ok(FunnelState { rho, rho_dot, xi, eps, r })
}

/// How an unspecified initial funnel width is derived from the initial error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    /// `rho_0 = ||e(0)|| + margin` on every axis.
    #[default]
    Norm,
    /// `rho_0 = |e_k(0)| + margin` per axis.
    Axis,
}

/// One axis of a funnel specification. Give either `rho_0` or `margin`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisFunnelSpec {
    #[serde(default)]
    pub rho_0: Option<f64>,
    #[serde(default)]
    pub margin: Option<f64>,
    pub rho_inf: f64,
    pub decay: f64,
}

/// Pose funnels keyed by axis, with `all` as the fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PoseFunnelSpec {
    #[serde(default)]
    pub all: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub x: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub y: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub z: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub roll: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub pitch: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub yaw: Option<AxisFunnelSpec>,
}

/// Velocity funnels keyed by twist component, with `all` as the fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VelocityFunnelSpec {
    #[serde(default)]
    pub margin_mode: MarginMode,
    #[serde(default)]
    pub all: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub vx: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub vy: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub vz: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub wx: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub wy: Option<AxisFunnelSpec>,
    #[serde(default)]
    pub wz: Option<AxisFunnelSpec>,
}

pub const POSE_AXIS_NAMES: [&str; 6] = ["x", "y", "z", "roll", "pitch", "yaw"];
pub const VELOCITY_AXIS_NAMES: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];
pub const PITCH: usize = 4;

impl PoseFunnelSpec {
    pub fn axis(&self, k: usize) -> Option<&AxisFunnelSpec> {
        [&self.x, &self.y, &self.z, &self.roll, &self.pitch, &self.yaw][k]
            .as_ref()
            .or(self.all.as_ref())
    }
}

impl VelocityFunnelSpec {
    pub fn axis(&self, k: usize) -> Option<&AxisFunnelSpec> {
        [&self.vx, &self.vy, &self.vz, &self.wx, &self.wy, &self.wz][k]
            .as_ref()
            .or(self.all.as_ref())
    }
}

fn resolve(
    key: String,
    spec: Option<&AxisFunnelSpec>,
    forced: Option<f64>,
    from_margin: impl Fn(f64) -> f64,
    error: f64,
    axis: usize,
) -> Result<PerformanceFunction> {
    let spec = spec.ok_or_else(|| Error::config(&key, "no funnel given for this active axis"))?;
    let rho_0 = match (forced, spec.rho_0, spec.margin) {
        (Some(r), None, None) => r,
        (Some(_), _, _) => {
            return Err(Error::config(&key, "the initial width of this axis is fixed to theta_star"));
        }
        (None, Some(r), None) => r,
        (None, None, Some(m)) if m > 0.0 => from_margin(m),
        (None, None, Some(_)) => return Err(Error::config(&key, "margin must be positive")),
        _ => return Err(Error::config(&key, "give exactly one of rho_0 or margin")),
    };
    let f = PerformanceFunction {
        rho_0,
        rho_inf: spec.rho_inf,
        decay: spec.decay,
    };
    f.validate(&key)?;
    if !(error.abs() < rho_0) {
        return Err(Error::InitialConditionViolation { axis, error: error.abs(), bound: rho_0 });
    }
    Ok(f)
}

/// Pose funnels from the initial pose error; the pitch axis starts at `theta_star`.
pub fn pose_funnels(spec: &PoseFunnelSpec, e_s0: &Vector6<f64>, theta_star: f64, axes: &[usize]) -> Result<FunnelSet> {
    let mut set = FunnelSet { axes: [None; 6] };
    for &k in axes {
        let forced = (k == PITCH).then_some(theta_star);
        let key = format!("controller.pose_funnel.{}", POSE_AXIS_NAMES[k]);
        set.axes[k] = Some(resolve(key, spec.axis(k), forced, |m| e_s0[k].abs() + m, e_s0[k], k)?);
    }
    Ok(set)
}

/// Velocity funnels from the initial velocity error.
pub fn velocity_funnels(spec: &VelocityFunnelSpec, e_v0: &Vector6<f64>, axes: &[usize]) -> Result<FunnelSet> {
    let norm = axes.iter().map(|&k| e_v0[k] * e_v0[k]).sum::<f64>().sqrt();
    let mut set = FunnelSet { axes: [None; 6] };
    for &k in axes {
        let key = format!("controller.velocity_funnel.{}", VELOCITY_AXIS_NAMES[k]);
        let base = match spec.margin_mode {
            MarginMode::Norm => norm,
            MarginMode::Axis => e_v0[k].abs(),
        };
        set.axes[k] = Some(resolve(key, spec.axis(k), None, |m| base + m, e_v0[k], k)?);
    }
    Ok(set)
}
