//! Scenario files (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::ctrl_adaptive::{AdaptiveGains, AttitudeError};
use crate::ctrl_ppc::PpcConfig;
use crate::error::{Error, Result};
use crate::model::agent::{AgentKind, AgentModel, Planar3R, PlanarLink, Synthetic6D};
use crate::model::coupled::{ObjectState, System};
use crate::model::disturbance::{DisturbanceKind, DisturbanceModel};
use crate::model::grasp::{Grasp, LoadShare};
use crate::model::object::ObjectModel;
use crate::sim::trajectory::TrajectoryConfig;
use crate::spatial::{quat_from_euler_continuous, EulerAngles, UnitQuaternion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Adaptive,
    Ppc,
    /// Zero wrench, optionally plus exact gravity compensation; for audits.
    Passive,
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "ppc" => Ok(Self::Ppc),
            "passive" => Ok(Self::Passive),
            _ => Err(format!("unknown controller `{s}` (adaptive, ppc, passive)")),
        }
    }
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adaptive => "adaptive",
            Self::Ppc => "ppc",
            Self::Passive => "passive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Hold {
    /// Controller sampled at `rate` and held between samples.
    #[default]
    ZeroOrderHold,
    /// Controller evaluated at every integrator stage.
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    #[serde(default)]
    pub hold: Hold,
    /// Controller rate [Hz]; defaults to one sample per plant step.
    #[serde(default)]
    pub rate: Option<f64>,
}

/// A scalar (times identity), a diagonal or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn matrix3(&self, key: &str) -> Result<Matrix3<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(*s * Matrix3::identity()),
            MatrixSpec::Diagonal(d) if d.len() == 3 => Ok(Matrix3::from_diagonal(&Vector3::from_column_slice(d))),
            MatrixSpec::Full(rows) if rows.len() == 3 && rows.iter().all(|r| r.len() == 3) => {
                Ok(Matrix3::from_fn(|i, j| rows[i][j]))
            }
            _ => Err(Error::config(key, "expected a scalar, 3 diagonal entries or a 3x3 matrix")),
        }
    }

    /// Diagonal over six axes; a list as long as `axes` fills only those axes.
    pub fn diagonal6(&self, key: &str, axes: &[usize]) -> Result<Matrix6<f64>> {
        let mut d = Vector6::repeat(1.0);
        match self {
            MatrixSpec::Scalar(s) => d = Vector6::repeat(*s),
            MatrixSpec::Diagonal(v) if v.len() == 6 => d = Vector6::from_column_slice(v),
            MatrixSpec::Diagonal(v) if v.len() == axes.len() => {
                for (k, &i) in axes.iter().enumerate() {
                    d[i] = v[k];
                }
            }
            _ => {
                return Err(Error::config(
                    key,
                    format!("expected a scalar or a diagonal with 6 or {} entries", axes.len()),
                ))
            }
        }
        Ok(Matrix6::from_diagonal(&d))
    }
}

fn one() -> f64 {
    1.0
}

/// Initial estimates as fractions of the true values (0 = start from zero).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimateInit {
    #[serde(default)]
    pub agent: f64,
    #[serde(default)]
    pub object: f64,
    #[serde(default)]
    pub disturbance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub k_p: MatrixSpec,
    pub k_zeta: MatrixSpec,
    pub k_v: MatrixSpec,
    #[serde(default = "one")]
    pub gamma_agent: f64,
    #[serde(default = "one")]
    pub gamma_object: f64,
    #[serde(default = "one")]
    pub beta_agent: f64,
    #[serde(default = "one")]
    pub beta_object: f64,
    #[serde(default)]
    pub attitude_error: AttitudeError,
    #[serde(default)]
    pub initial_estimates: EstimateInit,
    /// Desired stacked internal wrench (6 per agent), regulated through the null space of `G^T`.
    #[serde(default)]
    pub internal_force: Option<Vec<f64>>,
}

impl AdaptiveConfig {
    pub fn gains(&self, axes: &[usize]) -> Result<AdaptiveGains> {
        let g = AdaptiveGains {
            k_p: self.k_p.matrix3("adaptive.k_p")?,
            k_zeta: self.k_zeta.matrix3("adaptive.k_zeta")?,
            k_v: self.k_v.diagonal6("adaptive.k_v", axes)?,
            gamma_agent: self.gamma_agent,
            gamma_object: self.gamma_object,
            beta_agent: self.beta_agent,
            beta_object: self.beta_object,
            attitude_error: self.attitude_error,
        };
        g.validate().map_err(|e| match e {
            Error::Config { key, reason } => Error::Config { key: key.replace("controller.", "adaptive."), reason },
            e => e,
        })?;
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PassiveConfig {
    #[serde(default)]
    pub gravity_compensation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub mass: f64,
    pub inertia: MatrixSpec,
    /// `[x, y, z, roll, pitch, yaw]`.
    pub initial_pose: [f64; 6],
    /// `[phi, eps_x, eps_y, eps_z]`; overrides the orientation of `initial_pose`.
    #[serde(default)]
    pub initial_quaternion: Option<[f64; 4]>,
    /// Nonzero only for passive audits.
    #[serde(default)]
    pub initial_twist: Option<[f64; 6]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub length: f64,
    pub mass: f64,
    /// Distance of the link's center of mass from its joint; defaults to half the length.
    #[serde(default)]
    pub com: Option<f64>,
    /// Inertia about the center of mass; defaults to a slender rod.
    #[serde(default)]
    pub inertia: Option<f64>,
}

/// Structured synthetic 6-DOF agent: `M(q) = A + sum_k sin(q_k) B_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Diagonal of `A`.
    pub inertia: [f64; 6],
    /// Scale of the off-diagonal entries of `A`.
    #[serde(default)]
    pub cross: f64,
    /// Scale of the configuration-dependent matrices `B_k`.
    #[serde(default)]
    pub coupling: f64,
    /// Selects the entry pattern of `A` and `B_k`.
    #[serde(default)]
    pub pattern: usize,
    /// Gravity load on the vertical coordinate [N].
    pub weight: f64,
    #[serde(default)]
    pub q_rot0: [f64; 3],
}

impl SyntheticSpec {
    pub fn build(&self) -> Synthetic6D {
        let p = self.pattern;
        let a = Matrix6::from_diagonal(&Vector6::from_column_slice(&self.inertia))
            + Matrix6::from_fn(|i, j| if i != j { self.cross * (((i + j + p) % 3) as f64) } else { 0.0 });
        let b = std::array::from_fn(|k| {
            Matrix6::from_fn(|i, j| self.coupling * ((((i + j) * (k + 1) + p) % 5) as f64 - 2.0))
        });
        Synthetic6D {
            a,
            b,
            weight: self.weight,
            q_rot0: Vector3::from(self.q_rot0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentModelSpec {
    Planar3r {
        base: [f64; 3],
        /// `1` or `-1`.
        elbow: f64,
        links: [LinkSpec; 3],
        /// Viscous joint friction [N m s/rad].
        #[serde(default)]
        damping: [f64; 3],
    },
    Synthetic6d(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspSpec {
    /// End effector relative to the object's center of mass, object frame [m].
    pub offset: [f64; 3],
    /// End-effector orientation relative to the object, `[roll, pitch, yaw]`.
    #[serde(default)]
    pub rotation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadShareSpec {
    pub m_star: f64,
    pub j_star: MatrixSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub model: AgentModelSpec,
    pub torque_limits: Vec<f64>,
    pub grasp: GraspSpec,
    pub load_share: LoadShareSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default)]
    pub kind: DisturbanceKind,
    /// Gain on every agent coordinate.
    #[serde(default)]
    pub agent_gain: f64,
    /// Gain on every object twist component.
    #[serde(default)]
    pub object_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Plant step [s].
    pub dt: f64,
    /// Run length [s].
    pub duration: f64,
    #[serde(default)]
    pub timing: Timing,
    /// Seed of the disturbance frequencies and phases.
    #[serde(default)]
    pub seed: u64,
    /// The run passes only if it ends in a funnel or torque violation.
    #[serde(default)]
    pub expect_violation: bool,
    /// Telemetry row spacing [s]; defaults to the controller period.
    #[serde(default)]
    pub log_interval: Option<f64>,
    /// Output directory, relative to the scenario file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub controller: ControllerKind,
    #[serde(default)]
    pub adaptive: Option<AdaptiveConfig>,
    #[serde(default)]
    pub ppc: Option<PpcConfig>,
    #[serde(default)]
    pub passive: Option<PassiveConfig>,
    pub object: ObjectConfig,
    pub agents: Vec<AgentConfig>,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
}

/// Scenario-level overrides, as given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub controller: Option<ControllerKind>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("scenario", e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            Error::config(
                path.display().to_string(),
                e.message().to_string() + &span_hint(&text, e.span()),
            )
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(c) = o.controller {
            self.controller = c;
        }
        if let Some(dt) = o.dt {
            self.dt = dt;
        }
        if let Some(d) = o.duration {
            self.duration = d;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.validate()
    }

    /// Controller period [s].
    pub fn control_period(&self) -> f64 {
        match (self.timing.hold, self.timing.rate) {
            (Hold::ZeroOrderHold, Some(r)) => 1.0 / r,
            _ => self.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be at least dt"));
        }
        if let Some(r) = self.timing.rate {
            if !(r > 0.0 && 1.0 / r >= self.dt * (1.0 - 1e-12)) {
                return Err(Error::config("timing.rate", "must be positive and at most 1/dt"));
            }
        }
        if let Some(l) = self.log_interval {
            if !(l > 0.0) {
                return Err(Error::config("log_interval", "must be positive"));
            }
        }
        let sys = self.system()?;
        match self.controller {
            ControllerKind::Adaptive => {
                let a = self.adaptive.as_ref().ok_or_else(|| Error::config("adaptive", "missing section for controller = \"adaptive\""))?;
                a.gains(sys.axes())?;
                if let Some(f) = &a.internal_force {
                    if f.len() != 6 * sys.agents.len() {
                        return Err(Error::config("adaptive.internal_force", format!("expected {} entries", 6 * sys.agents.len())));
                    }
                }
            }
            ControllerKind::Ppc => {
                let p = self.ppc.as_ref().ok_or_else(|| Error::config("ppc", "missing section for controller = \"ppc\""))?;
                let pitch_bound = if sys.is_planar() { self.trajectory.pitch.max_abs() } else { self.trajectory.pitch_bound() };
                p.validate(pitch_bound).map_err(|e| match e {
                    Error::Config { key, reason } => Error::Config { key: key.replace("controller.", "ppc."), reason },
                    e => e,
                })?;
            }
            ControllerKind::Passive => {}
        }
        if self.controller != ControllerKind::Passive {
            if let Some(tw) = self.object.initial_twist {
                if tw.iter().any(|v| *v != 0.0) {
                    return Err(Error::config("object.initial_twist", "closed-loop runs start at rest"));
                }
            }
        }
        if let Some(q) = self.object.initial_quaternion {
            let n = Vector4::from(q).norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::config("object.initial_quaternion", format!("must have unit norm (got {n})")));
            }
        }
        if sys.is_planar() {
            let [_, y, _, roll, _, yaw] = self.object.initial_pose;
            if y != 0.0 || roll != 0.0 || yaw != 0.0 {
                return Err(Error::config("object.initial_pose", "planar scenarios keep y, roll and yaw at zero"));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<System> {
        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        let mut agents = Vec::with_capacity(self.agents.len());
        let mut grasps = Vec::new();
        let mut shares = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let kind = match &a.model {
                AgentModelSpec::Planar3r { base, elbow, links, damping } => AgentKind::Planar3R(Planar3R {
                    links: links.map(|l| PlanarLink {
                        length: l.length,
                        mass: l.mass,
                        com: l.com.unwrap_or(0.5 * l.length),
                        inertia: l.inertia.unwrap_or(l.mass * l.length * l.length / 12.0),
                    }),
                    base: Vector3::from(*base),
                    elbow: *elbow,
                    damping: Vector3::from(*damping),
                }),
                AgentModelSpec::Synthetic6d(s) => AgentKind::Synthetic6D(s.build()),
            };
            agents.push(AgentModel {
                kind,
                torque_limits: a.torque_limits.clone(),
            });
            let r = a.grasp.rotation;
            grasps.push(Grasp {
                offset: Vector3::from(a.grasp.offset),
                rotation: quat_from_euler_continuous(&EulerAngles::new(r[0], r[1], r[2])),
            });
            shares.push(LoadShare {
                m_star: a.load_share.m_star,
                j_star: a.load_share.j_star.matrix3(&format!("agents[{i}].load_share.j_star"))?,
            });
        }
        let joints: Vec<usize> = agents.iter().map(|a| a.n_joints()).collect();
        let d = &self.disturbance;
        let disturbance = DisturbanceModel::new(
            d.kind,
            joints.iter().map(|&n| DVector::repeat(n, d.agent_gain)).collect(),
            Vector6::repeat(d.object_gain),
            self.seed,
        );
        let sys = System {
            object: ObjectModel {
                mass: self.object.mass,
                inertia: self.object.inertia.matrix3("object.inertia")?,
            },
            agents,
            grasps,
            shares,
            disturbance,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn initial_state(&self) -> ObjectState {
        let x = self.object.initial_pose;
        let z = match self.object.initial_quaternion {
            Some(q) => UnitQuaternion::from_vector(&Vector4::from(q)),
            None => quat_from_euler_continuous(&EulerAngles::new(x[3], x[4], x[5])),
        };
        let mut s = ObjectState::at_rest(Vector3::new(x[0], x[1], x[2]), z);
        if let Some(tw) = self.object.initial_twist {
            s.v = Vector6::from(tw);
        }
        s
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
