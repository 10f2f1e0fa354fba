//! Model bounds measured by a seeded sweep over the funnel region, and the bound report of a scenario.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctrl_ppc::{
    bound_chain, funnel_init, pose_error, reference_velocity, transform, tune_gains, wrench_limits, BoundInputs, BoundReport,
    ModelBounds, PpcConfig, PpcFunnels, TrajectoryBounds, TunedGains,
};
use crate::error::{Error, Result};
use crate::model::coupled::{mask, ObjectState, System};
use crate::sim::config::{ControllerKind, ScenarioConfig};
use crate::spatial::{quat_from_euler, repr_jacobian_norm_bound, EulerAngles};

pub const DEFAULT_SAMPLES: usize = 2000;

fn spectral_norm(m: DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

fn sub(m: &nalgebra::Matrix6<f64>, axes: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(axes.len(), axes.len(), |r, c| m[(axes[r], axes[c])])
}

/// Largest twist norm the sweep visits: `sqrt(6) max rho_v(0) + ||x_d_dot||`.
pub fn velocity_cap(funnels: &PpcFunnels, trajectory_rate: f64) -> f64 {
    6f64.sqrt() * funnels.velocity.max_rho_0() + trajectory_rate
}

/// Sweep statistics next to the bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub bounds: ModelBounds,
    pub samples: usize,
    /// Samples with no valid agent configuration.
    pub skipped: usize,
    pub velocity_cap: f64,
}

/// Measures `m_lower, m_upper, c_upper, g_upper, d_upper` and the agent norms over poses inside
/// the initial pose funnel around the desired trajectory and twists up to the velocity cap.
pub fn measure_model_bounds(cfg: &ScenarioConfig, sys: &System, funnels: &PpcFunnels, theta_star: f64, samples: usize, seed: u64) -> Result<Sweep> {
    let axes = sys.axes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = velocity_cap(funnels, cfg.trajectory.rate_bound());
    let (rho_s0, _) = funnels.pose.eval(0.0);
    let mut b = ModelBounds {
        m_lower: f64::INFINITY,
        m_upper: 0.0,
        c_upper: 0.0,
        g_upper: 0.0,
        d_upper: 0.0,
        jo_upper: repr_jacobian_norm_bound(cfg.trajectory.pitch_bound() + theta_star),
        jm_norm: vec![0.0; sys.agents.len()],
        offset_norm: sys.grasps.iter().map(|g| g.offset.norm()).collect(),
        jt_norm: vec![0.0; sys.agents.len()],
    };
    let mut used = 0;
    let mut skipped = 0;
    for _ in 0..samples {
        let t = rng.gen_range(0.0..=cfg.duration);
        let r = cfg.trajectory.sample(t);
        let mut e = Vector6::zeros();
        for &k in axes {
            e[k] = rho_s0[k] * rng.gen_range(-1.0..1.0);
        }
        let eta = EulerAngles::from_vector(&(r.eta.to_vector() + e.fixed_rows::<3>(3)));
        let mut dir = Vector6::zeros();
        for &k in axes {
            dir[k] = rng.gen_range(-1.0..1.0);
        }
        let v = if dir.norm() > 0.0 { dir.normalize() * cap * rng.gen_range(0.0..=1.0) } else { dir };
        let rot_acc = if axes.len() == 6 {
            Vector3::from_fn(|_, _| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        } else {
            Vector3::new(0.0, e[4], 0.0)
        };
        let s = ObjectState { p: r.p + e.fixed_rows::<3>(0), z: quat_from_euler(&eta), v, rot_acc };
        let c = match sys.coupled(&s, t) {
            Ok(c) => c,
            Err(Error::KinematicSingularity { .. }) | Err(Error::Config { .. }) | Err(Error::UnsupportedModel { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let m = sub(&c.m_tilde, axes).symmetric_eigenvalues();
        b.m_lower = b.m_lower.min(m.min());
        b.m_upper = b.m_upper.max(m.max());
        b.c_upper = b.c_upper.max(spectral_norm(sub(&c.c_tilde, axes)));
        b.g_upper = b.g_upper.max(mask(&c.g_tilde, axes).norm());
        b.d_upper = b.d_upper.max(mask(&c.d_tilde, axes).norm());
        let (blocks, _) = sys.load_distribution(&s)?;
        for (i, agent) in sys.agents.iter().enumerate() {
            b.jm_norm[i] = b.jm_norm[i].max(spectral_norm(sub(&blocks[i], axes)));
            let q = &c.agents[i].q;
            let cols: Vec<_> = axes.iter().map(|&k| agent.torques(q, &Vector6::ith(k, 1.0))).collect();
            b.jt_norm[i] = b.jt_norm[i].max(spectral_norm(DMatrix::from_columns(&cols)));
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::InfeasibleBounds { stage: "model sweep found no valid configuration".into() });
    }
    Ok(Sweep { bounds: b, samples: used, skipped, velocity_cap: cap })
}

/// `||eps_s(0)||` and `||eps_v(0)||` for a PPC configuration.
pub fn initial_transformed_errors(cfg: &ScenarioConfig, ppc: &PpcConfig, funnels: &PpcFunnels, axes: &[usize]) -> Result<(f64, f64)> {
    let s = cfg.initial_state();
    let r = cfg.trajectory.sample(0.0);
    let (e_s, _) = pose_error(&s.p, &s.z, &r, axes)?;
    let ps = transform(&e_s, &funnels.pose, 0.0, "pose")?;
    let v_r = reference_velocity(&ps, &r.eta, &e_s, ppc.g_s, axes)?;
    let vs = transform(&mask(&(s.v - v_r), axes), &funnels.velocity, 0.0, "velocity")?;
    Ok((ps.eps.norm(), vs.eps.norm()))
}

/// Everything the `bounds` command reports for a PPC scenario.
#[derive(Clone, Debug)]
pub struct BoundAnalysis {
    pub sweep: Sweep,
    pub trajectory: TrajectoryBounds,
    pub g_s: f64,
    pub g_v: f64,
    pub eps_s0: f64,
    pub eps_v0: f64,
    pub chain: Result<BoundReport>,
    pub wrench_limits: Vec<f64>,
    pub tuned: Result<TunedGains>,
}

/// Bound chain at the configured gains, from a measured sweep, plus the gain tuner's suggestion.
pub fn analyze(cfg: &ScenarioConfig, samples: usize) -> Result<BoundAnalysis> {
    if cfg.controller != ControllerKind::Ppc {
        return Err(Error::config("controller", "bounds apply to controller = \"ppc\""));
    }
    cfg.validate()?;
    let ppc = cfg.ppc.as_ref().expect("validated");
    let sys = cfg.system()?;
    let axes = sys.axes();
    let s0 = cfg.initial_state();
    let r0 = cfg.trajectory.sample(0.0);
    let funnels = funnel_init(ppc, &s0.p, &s0.z, &s0.v, &r0, axes)?;
    let sweep = measure_model_bounds(cfg, &sys, &funnels, ppc.theta_star, samples, cfg.seed)?;
    let trajectory = TrajectoryBounds { pose: cfg.trajectory.pose_bound(), rate: cfg.trajectory.rate_bound() };
    let eval = |g_s: f64, g_v: f64| -> Result<(BoundReport, f64, f64)> {
        let p = PpcConfig { g_s, g_v, ..ppc.clone() };
        let f = funnel_init(&p, &s0.p, &s0.z, &s0.v, &r0, axes)?;
        let (eps_s0, eps_v0) = initial_transformed_errors(cfg, &p, &f, axes)?;
        let rep = bound_chain(&BoundInputs { model: &sweep.bounds, trajectory, funnels: &f, eps_s0, eps_v0, g_s, g_v })?;
        Ok((rep, eps_s0, eps_v0))
    };
    let (eps_s0, eps_v0) = initial_transformed_errors(cfg, ppc, &funnels, axes)?;
    let chain = eval(ppc.g_s, ppc.g_v).map(|(r, _, _)| r);
    let limits = wrench_limits(&cfg.agents.iter().map(|a| a.torque_limits.clone()).collect::<Vec<_>>(), &sweep.bounds.jt_norm);
    let tuned = tune_gains((ppc.g_s, ppc.g_v), &limits, |g_s, g_v| eval(g_s, g_v).map(|(r, _, _)| r));
    Ok(BoundAnalysis { sweep, trajectory, g_s: ppc.g_s, g_v: ppc.g_v, eps_s0, eps_v0, chain, wrench_limits: limits, tuned })
}

impl BoundAnalysis {
    /// `key = value` report; bounds too large for `f64` print as `inf` next to their logarithm.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let m = &self.sweep.bounds;
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", "));
        let _ = writeln!(s, "sweep_samples = {}\nsweep_skipped = {}", self.sweep.samples, self.sweep.skipped);
        let _ = writeln!(s, "sweep_velocity_cap = {:e}", self.sweep.velocity_cap);
        let _ = writeln!(s, "m_lower = {:e}\nm_upper = {:e}\nc_upper = {:e}", m.m_lower, m.m_upper, m.c_upper);
        let _ = writeln!(s, "g_upper = {:e}\nd_upper = {:e}\njo_upper = {:e}", m.g_upper, m.d_upper, m.jo_upper);
        let _ = writeln!(s, "jm_norm = {}\noffset_norm = {}\njt_norm = {}", list(&m.jm_norm), list(&m.offset_norm), list(&m.jt_norm));
        let _ = writeln!(s, "trajectory_pose = {:e}\ntrajectory_rate = {:e}", self.trajectory.pose, self.trajectory.rate);
        let _ = writeln!(s, "g_s = {:e}\ng_v = {:e}\neps_s0 = {:e}\neps_v0 = {:e}", self.g_s, self.g_v, self.eps_s0, self.eps_v0);
        let _ = writeln!(s, "wrench_limits = {}", list(&self.wrench_limits));
        match &self.chain {
            Ok(r) => {
                let _ = writeln!(s, "chain = \"feasible\"");
                s.push_str(&r.to_key_values());
            }
            Err(e) => {
                let _ = writeln!(s, "chain = \"infeasible\"\nchain_error = {:?}", e.to_string());
            }
        }
        match &self.tuned {
            Ok(t) => {
                let _ = writeln!(s, "tuned_g_s = {:e}\ntuned_g_v = {:e}\ntuned_adjusted = {}", t.g_s, t.g_v, t.adjusted);
            }
            Err(e) => {
                let _ = writeln!(s, "tuned_error = {:?}", e.to_string());
            }
        }
        s
    }
}
