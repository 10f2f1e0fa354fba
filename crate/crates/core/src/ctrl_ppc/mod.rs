//! Decentralized prescribed-performance controller, its bound chain and gain tuner.

pub mod bounds;
pub mod funnel;

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::coupled::{mask, LocalView, TeamConstants};
use crate::model::grasp::load_distribution;
use crate::sim::trajectory::TrajectorySample;
use crate::spatial::{euler_from_quat, repr_jacobian_inv, stack, wrap_angle, EulerAngles, UnitQuaternion, PITCH_SINGULAR_TOL};

pub use bounds::{bound_chain, tune_gains, wrench_limits, BoundInputs, BoundReport, LogBound, ModelBounds, TrajectoryBounds, TunedGains};
pub use funnel::{
    pose_funnels, transform, velocity_funnels, AxisFunnelSpec, FunnelSet, FunnelState, MarginMode, PerformanceFunction, PoseFunnelSpec,
    VelocityFunnelSpec,
};

/// Gains and funnel specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpcConfig {
    pub g_s: f64,
    pub g_v: f64,
    /// Initial width of the pitch funnel [rad].
    pub theta_star: f64,
    pub pose_funnel: PoseFunnelSpec,
    pub velocity_funnel: VelocityFunnelSpec,
}

impl PpcConfig {
    /// Checks gains and that the pitch envelope stays clear of the singularity.
    pub fn validate(&self, pitch_bound: f64) -> Result<()> {
        for (key, v) in [("controller.g_s", self.g_s), ("controller.g_v", self.g_v), ("controller.theta_star", self.theta_star)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(pitch_bound + self.theta_star < FRAC_PI_2) {
            return Err(Error::PitchBoundViolation {
                theta_bar: pitch_bound,
                theta_star: self.theta_star,
            });
        }
        Ok(())
    }
}

/// Pose and velocity funnels fixed at the start of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct PpcFunnels {
    pub pose: FunnelSet,
    pub velocity: FunnelSet,
}

/// Pose error `[p - p_d; wrap(eta - eta_d)]` on the active axes, plus the object's Euler angles.
pub fn pose_error(p_o: &nalgebra::Vector3<f64>, z_o: &UnitQuaternion, reference: &TrajectorySample, axes: &[usize]) -> Result<(Vector6<f64>, EulerAngles)> {
    let eta = euler_from_quat(z_o)?;
    let d = eta.to_vector() - reference.eta.to_vector();
    let e = stack(&(p_o - reference.p), &d.map(wrap_angle));
    Ok((mask(&e, axes), eta))
}

/// `v_r = -g_s J_O(eta_d + e_eta)^-1 rho_s^-1 r_s eps_s`.
pub fn reference_velocity(pose: &FunnelState, eta_d: &EulerAngles, e_s: &Vector6<f64>, g_s: f64, axes: &[usize]) -> Result<Vector6<f64>> {
    let eta = EulerAngles::from_vector(&(eta_d.to_vector() + e_s.fixed_rows::<3>(3)));
    if FRAC_PI_2 - eta.pitch.abs() < PITCH_SINGULAR_TOL {
        return Err(Error::RepresentationSingularity { pitch: eta.pitch });
    }
    Ok(mask(&(-g_s * repr_jacobian_inv(&eta) * pose.feedback()), axes))
}

/// `u_i = -g_v J_Mi rho_v^-1 r_v eps_v`.
pub fn ppc_wrench(j_m: &Matrix6<f64>, velocity: &FunnelState, g_v: f64, axes: &[usize]) -> Vector6<f64> {
    mask(&(-g_v * j_m * mask(&velocity.feedback(), axes)), axes)
}

/// Funnels from the initial state: pose first, then the velocity funnel around `v(0) - v_r(0)`.
pub fn funnel_init(
    cfg: &PpcConfig,
    p_o: &nalgebra::Vector3<f64>,
    z_o: &UnitQuaternion,
    v_o: &Vector6<f64>,
    reference: &TrajectorySample,
    axes: &[usize],
) -> Result<PpcFunnels> {
    let (e_s, _) = pose_error(p_o, z_o, reference, axes)?;
    let pose = pose_funnels(&cfg.pose_funnel, &e_s, cfg.theta_star, axes)?;
    let ps = transform(&e_s, &pose, 0.0, "pose")?;
    let v_r = reference_velocity(&ps, &reference.eta, &e_s, cfg.g_s, axes)?;
    let e_v = mask(&(v_o - v_r), axes);
    let velocity = velocity_funnels(&cfg.velocity_funnel, &e_v, axes)?;
    Ok(PpcFunnels { pose, velocity })
}

#[derive(Clone, Debug)]
pub struct PpcOutput {
    pub u: Vector6<f64>,
    pub e_s: Vector6<f64>,
    pub e_v: Vector6<f64>,
    pub v_r: Vector6<f64>,
    pub pose: FunnelState,
    pub velocity: FunnelState,
}

/// Agent `view.agent`'s wrench from its own view, the team constants and the funnels.
///
/// No model information enters: the law is model free.
pub fn control_ppc(
    team: &TeamConstants,
    view: &LocalView,
    funnels: &PpcFunnels,
    g_s: f64,
    g_v: f64,
    reference: &TrajectorySample,
    t: f64,
) -> Result<PpcOutput> {
    let axes = team.axes;
    let obj = team.object_from_view(view);
    let (e_s, _) = pose_error(&obj.p, &obj.z, reference, axes)?;
    let pose = transform(&e_s, &funnels.pose, t, "pose")?;
    let v_r = reference_velocity(&pose, &reference.eta, &e_s, g_s, axes)?;
    let e_v = mask(&(obj.v - v_r), axes);
    let velocity = transform(&e_v, &funnels.velocity, t, "velocity")?;
    let (blocks, _) = load_distribution(&obj.offsets, &team.shares)?;
    let u = ppc_wrench(&blocks[view.agent], &velocity, g_v, axes);
    Ok(PpcOutput {
        u,
        e_s,
        e_v,
        v_r,
        pose,
        velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coupled::tests::{planar_pair, synthetic_quad};
    use crate::model::coupled::ObjectState;
    use crate::model::grasp::object_wrench;
    use crate::sim::trajectory::{AxisSinusoid, TrajectoryConfig};
    use crate::spatial::quat_from_euler;
    use nalgebra::{DVector, Vector3};

    fn cfg() -> PpcConfig {
        let ax = |margin, rho_inf, decay| AxisFunnelSpec { rho_0: None, margin: Some(margin), rho_inf, decay };
        PpcConfig {
            g_s: 0.5,
            g_v: 10.0,
            theta_star: 0.3,
            pose_funnel: PoseFunnelSpec {
                all: Some(ax(0.1, 0.01, 0.5)),
                pitch: Some(AxisFunnelSpec { rho_0: None, margin: None, rho_inf: 0.01, decay: 0.5 }),
                ..Default::default()
            },
            velocity_funnel: VelocityFunnelSpec { all: Some(ax(1.0, 0.05, 0.5)), ..Default::default() },
        }
    }

    fn traj() -> TrajectoryConfig {
        TrajectoryConfig {
            x: AxisSinusoid { offset: 0.1, amplitude: 0.05, omega: 0.5, ..Default::default() },
            y: AxisSinusoid::constant(-0.1),
            z: AxisSinusoid::constant(0.2),
            roll: AxisSinusoid { offset: 0.1, amplitude: 0.2, omega: 0.3, ..Default::default() },
            pitch: AxisSinusoid { offset: 0.2, amplitude: 0.1, omega: 0.25, ..Default::default() },
            yaw: AxisSinusoid::constant(-0.3),
        }
    }

    fn state_near(r: &TrajectorySample) -> ObjectState {
        ObjectState {
            p: r.p + Vector3::new(0.02, -0.03, 0.01),
            z: quat_from_euler(&EulerAngles::new(r.eta.roll + 0.05, r.eta.pitch - 0.1, r.eta.yaw + 0.02)),
            v: Vector6::new(0.1, 0.0, -0.05, 0.02, 0.1, 0.0),
            rot_acc: Vector3::zeros(),
        }
    }

    #[test]
    fn zero_error_zero_output() {
        let sys = synthetic_quad(false);
        let r = traj().sample(0.0);
        let s = ObjectState::at_rest(r.p, r.z);
        let f = funnel_init(&cfg(), &s.p, &s.z, &s.v, &r, sys.axes()).unwrap();
        let c = sys.coupled(&s, 0.0).unwrap();
        let views = sys.local_views(&s, &c.agents);
        for v in &views {
            let o = control_ppc(&sys.team(), v, &f, 0.5, 10.0, &r, 0.0).unwrap();
            assert!(o.u.norm() < 1e-10 && o.v_r.norm() < 1e-10, "{} {}", o.u.norm(), o.v_r.norm());
        }
    }

    #[test]
    fn pure_x_error_reference_velocity() {
        let mut set = FunnelSet { axes: [None; 6] };
        for k in 0..6 {
            set.axes[k] = Some(PerformanceFunction::new(0.5, 0.1, 1.0).unwrap());
        }
        let e = Vector6::new(0.2, 0.0, 0.0, 0.0, 0.0, 0.0);
        let s = transform(&e, &set, 0.0, "pose").unwrap();
        let v = reference_velocity(&s, &EulerAngles::new(0.0, 0.0, 0.0), &e, 2.0, &[0, 1, 2, 3, 4, 5]).unwrap();
        let xi: f64 = 0.4;
        let expect = -2.0 / 0.5 * (2.0 / (1.0 - xi * xi)) * ((1.0 + xi) / (1.0 - xi)).ln();
        assert!((v[0] - expect).abs() < 1e-14);
        assert!(v.rows(1, 5).norm() == 0.0);
    }

    #[test]
    fn object_level_wrench_matches_vector_form() {
        for planar in [false, true] {
            let sys = if planar { planar_pair() } else { synthetic_quad(false) };
            let axes = sys.axes();
            let mut tc = traj();
            let r0 = if planar {
                tc = TrajectoryConfig {
                    x: AxisSinusoid { offset: 0.3, amplitude: 0.01, omega: 0.2, ..Default::default() },
                    z: AxisSinusoid::constant(0.12),
                    pitch: AxisSinusoid { amplitude: 0.05, omega: 0.3, ..Default::default() },
                    ..Default::default()
                };
                tc.sample(0.0)
            } else {
                tc.sample(0.0)
            };
            let mut s = state_near(&r0);
            if planar {
                s.p.y = 0.0;
                s.z = quat_from_euler(&EulerAngles::new(0.0, r0.eta.pitch + 0.05, 0.0));
                s.v = mask(&s.v, axes);
            }
            let f = funnel_init(&cfg(), &s.p, &s.z, &s.v, &r0, axes).unwrap();
            let t = 0.3;
            let r = tc.sample(t);
            let c = sys.coupled(&s, t).unwrap();
            let views = sys.local_views(&s, &c.agents);
            let outs: Vec<_> = views.iter().map(|v| control_ppc(&sys.team(), v, &f, 0.5, 10.0, &r, t).unwrap()).collect();
            let u = DVector::from_iterator(6 * outs.len(), outs.iter().flat_map(|o| o.u.iter().copied()));
            let lhs = object_wrench(&c.g, &u);
            let rhs = mask(&(-10.0 * outs[0].velocity.feedback()), axes);
            assert!((lhs - rhs).norm() < 1e-10 * (1.0 + rhs.norm()), "planar={planar}");
            // Every agent sees the same funnel state.
            for o in &outs[1..] {
                assert!((o.e_v - outs[0].e_v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn model_free_and_decentralized() {
        let sys = synthetic_quad(true);
        let r = traj().sample(0.0);
        let s = state_near(&r);
        let f = funnel_init(&cfg(), &s.p, &s.z, &s.v, &r, sys.axes()).unwrap();
        let c = sys.coupled(&s, 0.0).unwrap();
        let views = sys.local_views(&s, &c.agents);
        let u = control_ppc(&sys.team(), &views[2], &f, 0.5, 10.0, &r, 0.0).unwrap().u;
        // Different dynamics parameters, identical kinematics: identical commands.
        let mut heavy = sys.clone();
        heavy.object.mass *= 3.0;
        for a in &mut heavy.agents {
            if let crate::model::agent::AgentKind::Synthetic6D(m) = &mut a.kind {
                m.a *= 2.0;
                m.weight *= 5.0;
            }
        }
        let c2 = heavy.coupled(&s, 0.0).unwrap();
        let views2 = heavy.local_views(&s, &c2.agents);
        assert_eq!(views2[2], views[2]);
        let u2 = control_ppc(&heavy.team(), &views2[2], &f, 0.5, 10.0, &r, 0.0).unwrap().u;
        assert_eq!(u, u2);
    }

    #[test]
    fn pitch_bound_checked() {
        let c = cfg();
        assert!(c.validate(1.0).is_ok());
        assert!(matches!(c.validate(1.3), Err(Error::PitchBoundViolation { .. })));
    }

    #[test]
    fn violation_surfaces() {
        let sys = synthetic_quad(false);
        let r = traj().sample(0.0);
        let s = ObjectState::at_rest(r.p, r.z);
        let f = funnel_init(&cfg(), &s.p, &s.z, &s.v, &r, sys.axes()).unwrap();
        let mut far = s.clone();
        far.p.x += 1.0;
        let c = sys.coupled(&far, 0.0).unwrap();
        let views = sys.local_views(&far, &c.agents);
        let err = control_ppc(&sys.team(), &views[0], &f, 0.5, 10.0, &r, 0.0).unwrap_err();
        assert!(matches!(err, Error::FunnelViolation { funnel: "pose", axis: 0, .. }));
    }
}
