//! Decentralized adaptive quaternion-feedback controller.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::agent::AgentModel;
use crate::model::coupled::{mask, Coupled, LocalView, ObjectEstimate, ObjectState, System, TeamConstants};
use crate::model::disturbance::DisturbanceModel;
use crate::model::grasp::{
    grasp_matrix, load_distribution, object_to_agent_jacobian, object_to_agent_jacobian_dot,
};
use crate::model::object::object_regressor;
use crate::sim::trajectory::TrajectorySample;
use crate::spatial::{quat_error, skew, stack, UnitQuaternion};

/// Attitude part of the stacked error `e`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeError {
    /// `-e_eps`; stabilizes `e_phi = 1`, may unwind.
    #[default]
    Vector,
    /// `-e_phi e_eps`; no unwinding but admits undesired equilibria with `e_phi = 0`.
    Scaled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveGains {
    pub k_p: Matrix3<f64>,
    pub k_zeta: Matrix3<f64>,
    pub k_v: Matrix6<f64>,
    pub gamma_agent: f64,
    pub gamma_object: f64,
    pub beta_agent: f64,
    pub beta_object: f64,
    pub attitude_error: AttitudeError,
}

impl AdaptiveGains {
    pub fn k_f(&self) -> Matrix6<f64> {
        let mut k = Matrix6::zeros();
        k.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.k_p);
        k.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.k_zeta);
        k
    }

    pub fn validate(&self) -> Result<()> {
        let spd3 = |m: &Matrix3<f64>| (m - m.transpose()).norm() == 0.0 && m.cholesky().is_some();
        if !spd3(&self.k_p) {
            return Err(Error::config("controller.k_p", "must be symmetric positive definite"));
        }
        if !spd3(&self.k_zeta) {
            return Err(Error::config("controller.k_zeta", "must be symmetric positive definite"));
        }
        let off_diag = self.k_v - Matrix6::from_diagonal(&self.k_v.diagonal());
        if off_diag.norm() != 0.0 || self.k_v.diagonal().iter().any(|&k| !(k > 0.0)) {
            return Err(Error::config("controller.k_v", "must be diagonal with positive entries"));
        }
        for (key, v) in [
            ("controller.gamma_agent", self.gamma_agent),
            ("controller.gamma_object", self.gamma_object),
            ("controller.beta_agent", self.beta_agent),
            ("controller.beta_object", self.beta_object),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        Ok(())
    }
}

/// One agent's parameter and disturbance estimates, including its own copy of the object's.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentEstimates {
    pub theta: DVector<f64>,
    pub theta_object: DVector<f64>,
    pub d: DVector<f64>,
    pub d_object: Vector6<f64>,
}

impl AgentEstimates {
    pub fn zeros(n_params: usize, n_joints: usize) -> Self {
        Self {
            theta: DVector::zeros(n_params),
            theta_object: DVector::zeros(7),
            d: DVector::zeros(n_joints),
            d_object: Vector6::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.theta_object.len() + self.d.len() + 6
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write(&self, out: &mut Vec<f64>) {
        out.extend(self.theta.iter());
        out.extend(self.theta_object.iter());
        out.extend(self.d.iter());
        out.extend(self.d_object.iter());
    }

    /// Reads back from `src` using `self` for the shape.
    pub fn read(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for dst in [&mut self.theta, &mut self.theta_object, &mut self.d] {
            let n = dst.len();
            dst.copy_from_slice(&src[k..k + n]);
            k += n;
        }
        self.d_object.copy_from_slice(&src[k..k + 6]);
        k + 6
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveState {
    pub agents: Vec<AgentEstimates>,
}

impl AdaptiveState {
    pub fn zeros(sys: &System) -> Self {
        Self {
            agents: sys
                .agents
                .iter()
                .map(|a| AgentEstimates::zeros(a.params().len(), a.n_joints()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for a in &self.agents {
            a.write(&mut v);
        }
        v
    }

    pub fn set_flat(&mut self, src: &[f64]) {
        let mut k = 0;
        for a in &mut self.agents {
            k += a.read(&src[k..]);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseErrors {
    pub e_p: Vector3<f64>,
    pub e_zeta: UnitQuaternion,
    /// Stacked error `[e_p; -e_eps]` (or `[e_p; -e_phi e_eps]`).
    pub e: Vector6<f64>,
}

pub fn pose_errors(
    p_o: &Vector3<f64>,
    z_o: &UnitQuaternion,
    p_d: &Vector3<f64>,
    z_d: &UnitQuaternion,
    form: AttitudeError,
) -> PoseErrors {
    let e_p = p_o - p_d;
    let e_zeta = quat_error(z_d, z_o);
    let att = match form {
        AttitudeError::Vector => -e_zeta.eps,
        AttitudeError::Scaled => -e_zeta.phi * e_zeta.eps,
    };
    PoseErrors {
        e_p,
        e_zeta,
        e: stack(&e_p, &att),
    }
}

/// Quaternion error rates `(e_phi_dot, e_eps_dot)` for inertial angular velocities.
pub fn quat_error_rates(e: &UnitQuaternion, omega_o: &Vector3<f64>, omega_d: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let e_w = omega_o - omega_d;
    let phi_dot = 0.5 * e.eps.dot(&e_w);
    let eps_dot = -0.5 * (e.phi * Matrix3::identity() + skew(&e.eps)) * e_w - skew(&e.eps) * omega_d;
    (phi_dot, eps_dot)
}

/// Reference velocity `v_f = v_d - K_f e` and its exact time derivative.
pub fn reference_velocity(
    errs: &PoseErrors,
    v_o: &Vector6<f64>,
    reference: &TrajectorySample,
    gains: &AdaptiveGains,
) -> (Vector6<f64>, Vector6<f64>) {
    let omega_o: Vector3<f64> = v_o.fixed_rows::<3>(3).into();
    let lin: Vector3<f64> = v_o.fixed_rows::<3>(0).into();
    let e_p_dot = lin - reference.p_dot;
    let (phi_dot, eps_dot) = quat_error_rates(&errs.e_zeta, &omega_o, &reference.omega);
    let (att, att_dot) = match gains.attitude_error {
        AttitudeError::Vector => (errs.e_zeta.eps, eps_dot),
        AttitudeError::Scaled => (
            errs.e_zeta.phi * errs.e_zeta.eps,
            phi_dot * errs.e_zeta.eps + errs.e_zeta.phi * eps_dot,
        ),
    };
    let v_f = stack(
        &(reference.p_dot - gains.k_p * errs.e_p),
        &(reference.omega + gains.k_zeta * att),
    );
    let vdot_f = stack(
        &(reference.p_ddot - gains.k_p * e_p_dot),
        &(reference.omega_dot + gains.k_zeta * att_dot),
    );
    (v_f, vdot_f)
}

/// Controller output for one agent.
#[derive(Clone, Debug)]
pub struct AdaptiveOutput {
    pub u: Vector6<f64>,
    pub rates: AgentEstimates,
    pub errors: PoseErrors,
    pub v_f: Vector6<f64>,
    pub e_vf: Vector6<f64>,
}

/// Embeds an `n x k` task-axis matrix into 6 rows.
fn embed_rows(m: &DMatrix<f64>, axes: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(6, m.ncols());
    for (r, &i) in axes.iter().enumerate() {
        out.set_row(i, &m.row(r));
    }
    out
}

fn to6(v: &DVector<f64>) -> Vector6<f64> {
    Vector6::from_column_slice(v.as_slice())
}

/// Agent `view.agent`'s wrench and adaptation rates.
///
/// Uses only the agent's own view, the offline team constants, the regressor
/// structure of its own model and the disturbance regressors; no parameter values.
#[allow(clippy::too_many_arguments)]
pub fn control_adaptive(
    team: &TeamConstants,
    agent: &AgentModel,
    disturbance: &DisturbanceModel,
    view: &LocalView,
    est: &AgentEstimates,
    gains: &AdaptiveGains,
    reference: &TrajectorySample,
    t: f64,
) -> Result<AdaptiveOutput> {
    let obj = team.object_from_view(view);
    control_with_object(team, agent, disturbance, view, &obj, est, gains, reference, t)
}

#[allow(clippy::too_many_arguments)]
fn control_with_object(
    team: &TeamConstants,
    agent: &AgentModel,
    disturbance: &DisturbanceModel,
    view: &LocalView,
    obj: &ObjectEstimate,
    est: &AgentEstimates,
    gains: &AdaptiveGains,
    reference: &TrajectorySample,
    t: f64,
) -> Result<AdaptiveOutput> {
    let i = view.agent;
    let axes = team.axes;
    let errors = pose_errors(&obj.p, &obj.z, &reference.p, &reference.z, gains.attitude_error);
    let (v_f, vdot_f) = reference_velocity(&errors, &obj.v, reference, gains);
    let (v_f, vdot_f) = (mask(&v_f, axes), mask(&vdot_f, axes));
    let e_vf = mask(&(obj.v - v_f), axes);
    let e = mask(&errors.e, axes);

    let p_i = obj.offsets[i];
    let jo = object_to_agent_jacobian(&p_i);
    let jo_dot = object_to_agent_jacobian_dot(&p_i, &obj.omega());
    let a = jo * vdot_f + jo_dot * v_f;
    let b = jo * v_f;
    let y_i = agent.task_regressor(i, &view.q, &view.qd, &a, &b)?;
    let delta_i = embed_rows(&disturbance.agent_regressor(i, &view.q, &view.qd, t), agent.axes());
    let y_o = object_regressor(&obj.r, &obj.omega(), &vdot_f, &v_f);
    let delta_o = disturbance.object_regressor(obj.pose_rate_norm(), &obj.v, t);

    let (blocks, _) = load_distribution(&obj.offsets, &team.shares)?;
    let object_term = to6(&(&y_o * &est.theta_object)) + delta_o * est.d_object - e - gains.k_v * e_vf;
    let u = to6(&(&y_i * &est.theta)) + to6(&(&delta_i * &est.d)) + blocks[i] * mask(&object_term, axes);
    let u = mask(&u, axes);

    let w = jo * e_vf;
    let w_d = DVector::from_column_slice(w.as_slice());
    let e_vf_d = DVector::from_column_slice(e_vf.as_slice());
    let rates = AgentEstimates {
        theta: -gains.gamma_agent * y_i.transpose() * &w_d,
        theta_object: -gains.gamma_object * y_o.transpose() * &e_vf_d,
        d: -gains.beta_agent * delta_i.transpose() * &w_d,
        d_object: -gains.beta_object * delta_o.transpose() * e_vf,
    };
    Ok(AdaptiveOutput {
        u,
        rates,
        errors,
        v_f,
        e_vf,
    })
}

/// Internal-force share `(I - G+_M G^T) f_d` for one agent, from its own view.
pub fn internal_force_share(team: &TeamConstants, view: &LocalView, f_desired: &DVector<f64>) -> Result<Vector6<f64>> {
    let obj = team.object_from_view(view);
    let g = grasp_matrix(&obj.offsets)?;
    let (_, gm) = load_distribution(&obj.offsets, &team.shares)?;
    let full = crate::model::grasp::internal_force_term(&g, &gm, f_desired);
    Ok(Vector6::from_column_slice(&full.as_slice()[6 * view.agent..6 * view.agent + 6]))
}

/// Lyapunov function value and its analytic derivative along the closed loop.
///
/// Uses the true parameters, so this is a simulation diagnostic only.
pub fn lyapunov(
    sys: &System,
    s: &ObjectState,
    coupled: &Coupled,
    est: &AdaptiveState,
    gains: &AdaptiveGains,
    reference: &TrajectorySample,
) -> (f64, f64) {
    let axes = sys.axes();
    let errors = pose_errors(&s.p, &s.z, &reference.p, &reference.z, gains.attitude_error);
    let (v_f, _) = reference_velocity(&errors, &s.v, reference, gains);
    let e_vf = mask(&(s.v - mask(&v_f, axes)), axes);
    let e = mask(&errors.e, axes);
    let e_phi = errors.e_zeta.phi;
    let attitude = match gains.attitude_error {
        AttitudeError::Vector => 2.0 * (1.0 - e_phi),
        AttitudeError::Scaled => 1.0 - e_phi * e_phi,
    };
    let mut v = 0.5 * errors.e_p.norm_squared() + attitude + 0.5 * e_vf.dot(&(coupled.m_tilde * e_vf));
    let theta_o = DVector::from_vec(sys.object.params());
    let d_o = sys.disturbance.object_gain;
    for (i, (agent, ai)) in sys.agents.iter().zip(&est.agents).enumerate() {
        v += 0.5 / gains.gamma_agent * (&ai.theta - agent.params()).norm_squared();
        v += 0.5 / gains.beta_agent * (&ai.d - &sys.disturbance.agent_gain[i]).norm_squared();
    }
    if let Some(a0) = est.agents.first() {
        v += 0.5 / gains.gamma_object * (&a0.theta_object - &theta_o).norm_squared();
        v += 0.5 / gains.beta_object * (a0.d_object - d_o).norm_squared();
    }
    let v_dot = -e.dot(&(gains.k_f() * e)) - e_vf.dot(&(gains.k_v * e_vf));
    (v, v_dot)
}
