//! Fixed-step RK4 closed loop with zero-order-hold or continuous control.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DVector, Vector3, Vector6};

use crate::ctrl_adaptive::{
    control_adaptive, internal_force_share, lyapunov, AdaptiveGains, AdaptiveState, PoseErrors,
};
use crate::ctrl_ppc::{control_ppc, funnel_init, PpcFunnels, PpcOutput};
use crate::error::{Error, Result};
use crate::model::coupled::{mask, Coupled, LocalView, ObjectState, System, TeamConstants};
use crate::sim::config::{ControllerKind, Hold, ScenarioConfig};
use crate::sim::telemetry::TelemetryWriter;
use crate::sim::trajectory::TrajectorySample;
use crate::spatial::{euler_from_rotation_unchecked, quat_derivative, quat_error, stack, wrap_angle, UnitQuaternion};

/// Slack on sample and log instants, relative to `dt`.
const TIME_SLACK: f64 = 1e-9;

enum Law {
    Adaptive {
        gains: AdaptiveGains,
        internal: Option<DVector<f64>>,
    },
    Ppc {
        funnels: PpcFunnels,
        g_s: f64,
        g_v: f64,
    },
    Passive {
        gravity_compensation: bool,
    },
}

/// What the controller produced at one evaluation.
#[derive(Clone, Debug)]
pub struct Command {
    pub u: Vec<Vector6<f64>>,
    /// Flattened adaptation rates (empty unless adaptive).
    pub rates: Vec<f64>,
    pub detail: Detail,
}

#[derive(Clone, Debug)]
pub enum Detail {
    Adaptive { errors: PoseErrors, e_vf: Vector6<f64> },
    Ppc(Box<PpcOutput>),
    Passive,
}

/// Plant state plus adaptive estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub object: ObjectState,
    pub estimates: Option<AdaptiveState>,
}

impl SimState {
    fn to_flat(&self) -> Vec<f64> {
        let o = &self.object;
        let mut x = Vec::with_capacity(16);
        x.extend(o.p.iter());
        x.extend(o.z.to_vector().iter());
        x.extend(o.v.iter());
        x.extend(o.rot_acc.iter());
        if let Some(e) = &self.estimates {
            x.extend(e.to_flat());
        }
        x
    }

    fn from_flat(&self, x: &[f64]) -> Self {
        let z = UnitQuaternion::from_parts_unchecked(x[3], Vector3::new(x[4], x[5], x[6]));
        let object = ObjectState {
            p: Vector3::new(x[0], x[1], x[2]),
            z,
            v: Vector6::from_column_slice(&x[7..13]),
            rot_acc: Vector3::new(x[13], x[14], x[15]),
        };
        let estimates = self.estimates.as_ref().map(|e| {
            let mut e = e.clone();
            e.set_flat(&x[16..]);
            e
        });
        Self { object, estimates }
    }
}

/// The closed loop of one scenario.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub sys: System,
    team: TeamConstants,
    law: Law,
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Completed,
    /// A funnel left its envelope; the run stopped here.
    FunnelViolation(Error),
    /// Any other error; the run stopped here.
    Failed(Error),
}

/// Summary of one run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub controller: ControllerKind,
    pub outcome: Outcome,
    pub expect_violation: bool,
    /// Time of the last completed step.
    pub t_end: f64,
    pub steps: usize,
    pub wall_clock: f64,
    /// Per axis, largest `|x_O - x_d|` (angles wrapped).
    pub max_pose_error: [f64; 6],
    pub final_position_error: f64,
    /// `||e_eps||` of the quaternion error at the end.
    pub final_attitude_error: f64,
    pub final_e_phi: f64,
    pub min_e_phi: f64,
    pub max_abs_pitch: f64,
    pub funnel_violations: usize,
    /// Plant steps on which some joint exceeded its torque limit.
    pub saturation_violations: usize,
    /// Per agent, per joint, largest `|tau|`.
    pub max_torque: Vec<Vec<f64>>,
    /// Largest `|tau|` over `t <= 1 ms`.
    pub initial_torque_peak: f64,
    pub max_agent_wrench: Vec<f64>,
    pub max_agent_velocity: Vec<f64>,
    /// Largest `|norm(zeta) - 1|` before renormalization.
    pub max_quaternion_drift: f64,
    /// Adaptive only: Lyapunov value at the start and the end.
    pub lyapunov_initial: Option<f64>,
    pub lyapunov_final: Option<f64>,
    /// Adaptive only: largest analytic `V_dot`.
    pub max_lyapunov_rate: Option<f64>,
    /// Adaptive only: largest step-to-step increase of `V`, relative to `V(0)`.
    pub lyapunov_increase: Option<f64>,
    /// Adaptive only: norm of all estimation errors at the start and its maximum.
    pub estimate_error_initial: Option<f64>,
    pub estimate_error_max: Option<f64>,
    /// Adaptive only: largest `||G^T u_int||` of the internal-force term.
    pub max_internal_residual: Option<f64>,
    /// Passive only: `max |E(t) - E(0)| / |E(0)|`.
    pub energy_drift: Option<f64>,
    /// PPC only: per axis, smallest `rho - |e|` for the pose and velocity funnels.
    pub pose_margin: Option<[f64; 6]>,
    pub velocity_margin: Option<[f64; 6]>,
    /// Final object state.
    pub final_state: ObjectState,
}

impl RunReport {
    /// Whether any funnel or torque limit was violated.
    pub fn violated(&self) -> bool {
        self.funnel_violations > 0 || self.saturation_violations > 0
    }

    /// A run passes when it completes, or ends in a funnel violation, exactly as expected.
    pub fn passed(&self) -> bool {
        match &self.outcome {
            Outcome::Failed(_) => false,
            _ => self.violated() == self.expect_violation,
        }
    }

    pub fn status(&self) -> &'static str {
        match (&self.outcome, self.passed()) {
            (Outcome::Failed(_), _) => "error",
            (_, true) => "pass",
            (_, false) => "fail",
        }
    }

    pub fn error(&self) -> Option<&Error> {
        match &self.outcome {
            Outcome::Completed => None,
            Outcome::FunnelViolation(e) | Outcome::Failed(e) => Some(e),
        }
    }

    /// `key = value` lines with JSON literal values.
    pub fn to_key_values(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let num = |x: f64| if x.is_finite() { format!("{x:e}") } else { "null".to_string() };
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "));
        let quoted = |x: &str| format!("{:?}", x);
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("name", quoted(&self.name));
        put("controller", quoted(self.controller.name()));
        put("status", quoted(self.status()));
        put("expect_violation", self.expect_violation.to_string());
        put("error", self.error().map(|e| quoted(&e.to_string())).unwrap_or_else(|| "null".into()));
        put("t_end", num(self.t_end));
        put("steps", self.steps.to_string());
        put("wall_clock_s", num(self.wall_clock));
        put("funnel_violations", self.funnel_violations.to_string());
        put("saturation_violations", self.saturation_violations.to_string());
        put("max_pose_error", list(&self.max_pose_error));
        put("final_position_error", num(self.final_position_error));
        put("final_attitude_error", num(self.final_attitude_error));
        put("final_e_phi", num(self.final_e_phi));
        put("min_e_phi", num(self.min_e_phi));
        put("max_abs_pitch", num(self.max_abs_pitch));
        for (i, t) in self.max_torque.iter().enumerate() {
            put(&format!("max_torque_{i}"), list(t));
        }
        put("initial_torque_peak", num(self.initial_torque_peak));
        put("max_agent_wrench", list(&self.max_agent_wrench));
        put("max_agent_velocity", list(&self.max_agent_velocity));
        put("max_quaternion_drift", num(self.max_quaternion_drift));
        let opt = |o: Option<f64>| o.map(num).unwrap_or_else(|| "null".into());
        put("lyapunov_initial", opt(self.lyapunov_initial));
        put("lyapunov_final", opt(self.lyapunov_final));
        put("max_lyapunov_rate", opt(self.max_lyapunov_rate));
        put("lyapunov_increase", opt(self.lyapunov_increase));
        put("estimate_error_initial", opt(self.estimate_error_initial));
        put("estimate_error_max", opt(self.estimate_error_max));
        put("max_internal_residual", opt(self.max_internal_residual));
        put("energy_drift", opt(self.energy_drift));
        if let Some(m) = &self.pose_margin {
            put("pose_margin", list(m));
        }
        if let Some(m) = &self.velocity_margin {
            put("velocity_margin", list(m));
        }
        let o = &self.final_state;
        put("final_position", list(o.p.as_slice()));
        put("final_quaternion", list(o.z.to_vector().as_slice()));
        put("final_twist", list(o.v.as_slice()));
        s
    }
}

fn estimate_error(sys: &System, est: &AdaptiveState) -> f64 {
    let theta_o = DVector::from_vec(sys.object.params());
    let mut sq = 0.0;
    for (i, (a, e)) in sys.agents.iter().zip(&est.agents).enumerate() {
        sq += (&e.theta - a.params()).norm_squared();
        sq += (&e.d - &sys.disturbance.agent_gain[i]).norm_squared();
        sq += (&e.theta_object - &theta_o).norm_squared();
        sq += (e.d_object - sys.disturbance.object_gain).norm_squared();
    }
    sq.sqrt()
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let sys = cfg.system()?;
        let axes = sys.axes();
        let law = match cfg.controller {
            ControllerKind::Adaptive => {
                let a = cfg.adaptive.as_ref().expect("validated");
                Law::Adaptive {
                    gains: a.gains(axes)?,
                    internal: a.internal_force.as_ref().map(|f| DVector::from_column_slice(f)),
                }
            }
            ControllerKind::Ppc => {
                let p = cfg.ppc.as_ref().expect("validated");
                let s = cfg.initial_state();
                let r = cfg.trajectory.sample(0.0);
                let funnels = funnel_init(p, &s.p, &s.z, &s.v, &r, axes).map_err(|e| match e {
                    Error::Config { key, reason } => Error::Config { key: key.replace("controller.", "ppc."), reason },
                    e => e,
                })?;
                Law::Ppc { funnels, g_s: p.g_s, g_v: p.g_v }
            }
            ControllerKind::Passive => Law::Passive {
                gravity_compensation: cfg.passive.unwrap_or_default().gravity_compensation,
            },
        };
        let team = sys.team();
        Ok(Self { cfg, sys, team, law })
    }

    pub fn funnels(&self) -> Option<&PpcFunnels> {
        match &self.law {
            Law::Ppc { funnels, .. } => Some(funnels),
            _ => None,
        }
    }

    pub fn initial_state(&self) -> SimState {
        let object = self.cfg.initial_state();
        let estimates = match &self.law {
            Law::Adaptive { .. } => {
                let f = self.cfg.adaptive.as_ref().expect("validated").initial_estimates;
                let mut e = AdaptiveState::zeros(&self.sys);
                let theta_o = DVector::from_vec(self.sys.object.params());
                for (i, (a, est)) in self.sys.agents.iter().zip(e.agents.iter_mut()).enumerate() {
                    est.theta = f.agent * a.params();
                    est.theta_object = f.object * &theta_o;
                    est.d = f.disturbance * &self.sys.disturbance.agent_gain[i];
                    est.d_object = f.disturbance * self.sys.disturbance.object_gain;
                }
                Some(e)
            }
            _ => None,
        };
        SimState { object, estimates }
    }

    /// Evaluates every agent's controller at one state.
    pub fn command(&self, s: &SimState, c: &Coupled, reference: &TrajectorySample, t: f64) -> Result<Command> {
        let views = self.sys.local_views(&s.object, &c.agents);
        match &self.law {
            Law::Adaptive { gains, internal } => {
                let est = s.estimates.as_ref().expect("adaptive state");
                let mut u = Vec::with_capacity(views.len());
                let mut rates = AdaptiveState { agents: Vec::with_capacity(views.len()) };
                let mut detail = None;
                for (i, view) in views.iter().enumerate() {
                    let out = control_adaptive(
                        &self.team,
                        &self.sys.agents[i],
                        &self.sys.disturbance,
                        view,
                        &est.agents[i],
                        gains,
                        reference,
                        t,
                    )?;
                    let mut ui = out.u;
                    if let Some(f) = internal {
                        ui += mask(&internal_force_share(&self.team, view, f)?, self.team.axes);
                    }
                    u.push(ui);
                    rates.agents.push(out.rates);
                    if detail.is_none() {
                        detail = Some(Detail::Adaptive { errors: out.errors, e_vf: out.e_vf });
                    }
                }
                Ok(Command { u, rates: rates.to_flat(), detail: detail.expect("at least one agent") })
            }
            Law::Ppc { funnels, g_s, g_v } => {
                let mut u = Vec::with_capacity(views.len());
                let mut detail = None;
                for view in &views {
                    let out = control_ppc(&self.team, view, funnels, *g_s, *g_v, reference, t)?;
                    u.push(out.u);
                    if detail.is_none() {
                        detail = Some(Detail::Ppc(Box::new(out)));
                    }
                }
                Ok(Command { u, rates: Vec::new(), detail: detail.expect("at least one agent") })
            }
            Law::Passive { gravity_compensation } => {
                let u = if *gravity_compensation {
                    let (blocks, _) = self.sys.load_distribution(&s.object)?;
                    blocks.iter().map(|b| mask(&(b * c.g_tilde), self.team.axes)).collect()
                } else {
                    vec![Vector6::zeros(); views.len()]
                };
                Ok(Command { u, rates: Vec::new(), detail: Detail::Passive })
            }
        }
    }

    /// PPC funnel check from agent 0's view (identical for every agent).
    fn check_funnels(&self, views: &[LocalView], reference: &TrajectorySample, t: f64) -> Result<Option<PpcOutput>> {
        match &self.law {
            Law::Ppc { funnels, g_s, g_v } => Ok(Some(control_ppc(&self.team, &views[0], funnels, *g_s, *g_v, reference, t)?)),
            _ => Ok(None),
        }
    }

    /// Time derivative of the flattened state under `cmd`.
    fn derivative(&self, s: &SimState, c: &Coupled, cmd: &Command) -> Vec<f64> {
        let o = &s.object;
        let omega = o.omega();
        let vdot = self.sys.acceleration(c, &o.v, &cmd.u);
        let mut dx = Vec::with_capacity(16 + cmd.rates.len());
        dx.extend(o.v.fixed_rows::<3>(0).iter());
        dx.extend(quat_derivative(&o.z, &omega).iter());
        dx.extend(vdot.iter());
        dx.extend(omega.iter());
        dx.extend(cmd.rates.iter());
        dx
    }

    /// One RK4 step from `(s, t)`; `c0` and `cmd0` are the evaluations at the start.
    ///
    /// With `held = Some(cmd)` the command is frozen over the step.
    fn rk4(&self, s: &SimState, c0: &Coupled, cmd0: &Command, held: bool, t: f64, dt: f64) -> Result<(SimState, f64)> {
        let x0 = s.to_flat();
        let stage = |x: &[f64], ts: f64| -> Result<Vec<f64>> {
            let mut st = s.from_flat(x);
            st.object.z.renormalize();
            let c = self.sys.coupled(&st.object, ts)?;
            if held {
                Ok(self.derivative(&st, &c, cmd0))
            } else {
                let r = self.cfg.trajectory.sample(ts);
                let cmd = self.command(&st, &c, &r, ts)?;
                Ok(self.derivative(&st, &c, &cmd))
            }
        };
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x0.iter().zip(k).map(|(x, k)| x + a * k).collect() };
        let k1 = self.derivative(s, c0, cmd0);
        let k2 = stage(&axpy(0.5 * dt, &k1), t + 0.5 * dt)?;
        let k3 = stage(&axpy(0.5 * dt, &k2), t + 0.5 * dt)?;
        let k4 = stage(&axpy(dt, &k3), t + dt)?;
        let x1: Vec<f64> = (0..x0.len())
            .map(|i| x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        let mut next = s.from_flat(&x1);
        let drift = (next.object.z.norm() - 1.0).abs();
        next.object.z.renormalize();
        Ok((next, drift))
    }

    /// Runs to completion or first hard failure; telemetry rows go to `sink`.
    pub fn run(&self, mut sink: Option<&mut dyn Write>) -> Result<RunReport> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let sys = &self.sys;
        let dt = cfg.dt;
        let n_steps = (cfg.duration / dt).round() as usize;
        let continuous = cfg.timing.hold == Hold::Continuous;
        let period = cfg.control_period();
        let log_every = cfg.log_interval.unwrap_or(period);
        let n_agents = sys.agents.len();

        let mut writer = match sink.as_deref_mut() {
            Some(w) => Some(TelemetryWriter::new(w, cfg.controller, &sys.joints())?),
            None => None,
        };

        let mut s = self.initial_state();
        let mut rep = RunReport {
            name: cfg.name.clone(),
            controller: cfg.controller,
            outcome: Outcome::Completed,
            expect_violation: cfg.expect_violation,
            t_end: 0.0,
            steps: 0,
            wall_clock: 0.0,
            max_pose_error: [0.0; 6],
            final_position_error: 0.0,
            final_attitude_error: 0.0,
            final_e_phi: 1.0,
            min_e_phi: 1.0,
            max_abs_pitch: 0.0,
            funnel_violations: 0,
            saturation_violations: 0,
            max_torque: sys.joints().iter().map(|&n| vec![0.0; n]).collect(),
            initial_torque_peak: 0.0,
            max_agent_wrench: vec![0.0; n_agents],
            max_agent_velocity: vec![0.0; n_agents],
            max_quaternion_drift: 0.0,
            lyapunov_initial: None,
            lyapunov_final: None,
            max_lyapunov_rate: None,
            lyapunov_increase: None,
            estimate_error_initial: None,
            estimate_error_max: None,
            max_internal_residual: None,
            energy_drift: None,
            pose_margin: matches!(self.law, Law::Ppc { .. }).then_some([f64::INFINITY; 6]),
            velocity_margin: matches!(self.law, Law::Ppc { .. }).then_some([f64::INFINITY; 6]),
            final_state: s.object.clone(),
        };
        let gravity_compensated = matches!(self.law, Law::Passive { gravity_compensation: true });
        let energy = |o: &ObjectState, c: &Coupled| -> Result<f64> {
            if gravity_compensated {
                Ok(0.5 * o.v.dot(&(c.m_tilde * o.v)))
            } else {
                sys.energy(o)
            }
        };
        let mut energy0 = None;
        let mut prev_v: Option<f64> = None;
        let mut held: Option<Command> = None;
        let mut next_sample = 0.0;
        let mut next_log = 0.0;

        for k in 0..=n_steps {
            let t = k as f64 * dt;
            let step = (|| -> Result<Option<(SimState, f64)>> {
                let c = sys.coupled(&s.object, t)?;
                let reference = cfg.trajectory.sample(t);
                let fresh = continuous || held.is_none() || t >= next_sample - TIME_SLACK * dt;
                if fresh {
                    held = Some(self.command(&s, &c, &reference, t)?);
                    while next_sample <= t + TIME_SLACK * dt {
                        next_sample += period;
                    }
                }
                let cmd = held.as_ref().expect("command");
                let views = sys.local_views(&s.object, &c.agents);
                let ppc = if fresh {
                    match &cmd.detail {
                        Detail::Ppc(o) => Some((**o).clone()),
                        _ => None,
                    }
                } else {
                    self.check_funnels(&views, &reference, t)?
                };
                let torques = self.monitor(&mut rep, &s, &c, cmd, ppc.as_ref(), &reference, t)?;
                let mut lyap = None;
                if let Law::Adaptive { gains, .. } = &self.law {
                    let est = s.estimates.as_ref().expect("adaptive state");
                    let (v, vdot) = lyapunov(sys, &s.object, &c, est, gains, &reference);
                    lyap = Some((v, vdot));
                    let v0 = *rep.lyapunov_initial.get_or_insert(v);
                    rep.lyapunov_final = Some(v);
                    let r = rep.max_lyapunov_rate.get_or_insert(f64::NEG_INFINITY);
                    *r = r.max(vdot);
                    if let Some(pv) = prev_v {
                        let inc = rep.lyapunov_increase.get_or_insert(0.0);
                        *inc = inc.max((v - pv) / v0.max(f64::MIN_POSITIVE));
                    }
                    prev_v = Some(v);
                    let ee = estimate_error(sys, est);
                    rep.estimate_error_initial.get_or_insert(ee);
                    let m = rep.estimate_error_max.get_or_insert(0.0);
                    *m = m.max(ee);
                    if let Some(f) = cfg.adaptive.as_ref().and_then(|a| a.internal_force.as_ref()) {
                        let mut total = Vector6::zeros();
                        for (i, view) in views.iter().enumerate() {
                            let share = mask(&internal_force_share(&self.team, view, &DVector::from_column_slice(f))?, self.team.axes);
                            total += c.agents[i].jo.transpose() * share;
                        }
                        let m = rep.max_internal_residual.get_or_insert(0.0);
                        *m = m.max(total.norm());
                    }
                }
                if matches!(self.law, Law::Passive { .. }) {
                    let e = energy(&s.object, &c)?;
                    let e0 = *energy0.get_or_insert(e);
                    let d = rep.energy_drift.get_or_insert(0.0);
                    *d = d.max((e - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
                }
                if let Some(w) = writer.as_mut() {
                    if t >= next_log - TIME_SLACK * dt || k == n_steps {
                        w.row(t, &s.object, cmd, ppc.as_ref(), &torques, lyap)?;
                        while next_log <= t + TIME_SLACK * dt {
                            next_log += log_every;
                        }
                    }
                }
                if k == n_steps {
                    return Ok(None);
                }
                Ok(Some(self.rk4(&s, &c, cmd, !continuous, t, dt)?))
            })();
            match step {
                Ok(Some((next, drift))) => {
                    rep.max_quaternion_drift = rep.max_quaternion_drift.max(drift);
                    s = next;
                    rep.steps = k + 1;
                    rep.t_end = (k + 1) as f64 * dt;
                }
                Ok(None) => break,
                Err(e @ Error::FunnelViolation { .. }) => {
                    rep.funnel_violations += 1;
                    rep.outcome = Outcome::FunnelViolation(e);
                    break;
                }
                Err(e) => {
                    rep.outcome = Outcome::Failed(e);
                    break;
                }
            }
        }
        rep.final_state = s.object.clone();
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
        rep.wall_clock = started.elapsed().as_secs_f64();
        Ok(rep)
    }

    #[allow(clippy::too_many_arguments)]
    fn monitor(
        &self,
        rep: &mut RunReport,
        s: &SimState,
        c: &Coupled,
        cmd: &Command,
        ppc: Option<&PpcOutput>,
        reference: &TrajectorySample,
        t: f64,
    ) -> Result<Vec<DVector<f64>>> {
        let o = &s.object;
        let eta = euler_from_rotation_unchecked(&o.z.rotation());
        let d = eta.to_vector() - reference.eta.to_vector();
        let e = mask(&stack(&(o.p - reference.p), &d.map(wrap_angle)), self.sys.axes());
        for k in 0..6 {
            rep.max_pose_error[k] = rep.max_pose_error[k].max(e[k].abs());
        }
        let ez = quat_error(&reference.z, &o.z);
        rep.final_position_error = (o.p - reference.p).norm();
        rep.final_attitude_error = ez.eps.norm();
        rep.final_e_phi = ez.phi;
        rep.min_e_phi = rep.min_e_phi.min(ez.phi);
        rep.max_abs_pitch = rep.max_abs_pitch.max(eta.pitch.abs());

        let mut torques = Vec::with_capacity(cmd.u.len());
        let mut saturated = false;
        for (i, (agent, snap)) in self.sys.agents.iter().zip(&c.agents).enumerate() {
            let tau = agent.torques(&snap.q, &cmd.u[i]);
            for (j, tj) in tau.iter().enumerate() {
                let a = tj.abs();
                rep.max_torque[i][j] = rep.max_torque[i][j].max(a);
                if a > agent.torque_limits[j] {
                    saturated = true;
                }
                if t <= 1e-3 * (1.0 + TIME_SLACK) {
                    rep.initial_torque_peak = rep.initial_torque_peak.max(a);
                }
            }
            rep.max_agent_wrench[i] = rep.max_agent_wrench[i].max(cmd.u[i].norm());
            rep.max_agent_velocity[i] = rep.max_agent_velocity[i].max(snap.v.norm());
            torques.push(tau);
        }
        if saturated {
            rep.saturation_violations += 1;
        }
        if let Some(p) = ppc {
            let (pm, vm) = (rep.pose_margin.as_mut().expect("ppc"), rep.velocity_margin.as_mut().expect("ppc"));
            for &k in self.sys.axes() {
                pm[k] = pm[k].min(p.pose.rho[k] - p.e_s[k].abs());
                vm[k] = vm[k].min(p.velocity.rho[k] - p.e_v[k].abs());
            }
        }
        Ok(torques)
    }
}

/// Validates, runs and reports one scenario.
pub fn run_scenario(cfg: ScenarioConfig, sink: Option<&mut dyn Write>) -> Result<RunReport> {
    Simulation::new(cfg)?.run(sink)
}
