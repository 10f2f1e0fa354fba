//! Coupled object-agent dynamics with the object as master coordinate.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::model::agent::{AgentKind, AgentModel, TaskTerms, PLANAR_AXES, SPATIAL_AXES};
use crate::model::disturbance::DisturbanceModel;
use crate::model::grasp::{
    grasp_matrix, load_distribution, object_to_agent_jacobian, object_to_agent_jacobian_dot,
    weighted_offset_sum, world_offsets, Grasp, LoadShare,
};
use crate::model::object::ObjectModel;
use crate::spatial::{quat_derivative, quat_mul, UnitQuaternion};

/// Object pose and twist plus the integral of its angular velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectState {
    pub p: Vector3<f64>,
    pub z: UnitQuaternion,
    pub v: Vector6<f64>,
    pub rot_acc: Vector3<f64>,
}

impl ObjectState {
    pub fn at_rest(p: Vector3<f64>, z: UnitQuaternion) -> Self {
        Self {
            p,
            z,
            v: Vector6::zeros(),
            rot_acc: Vector3::zeros(),
        }
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.v.fixed_rows::<3>(3).into()
    }

    /// Norm of the pose rate `[p_dot; zeta_dot]`.
    pub fn pose_rate_norm(&self) -> f64 {
        let lin = self.v.fixed_rows::<3>(0).norm_squared();
        let zd = quat_derivative(&self.z, &self.omega());
        (lin + zd.norm_squared()).sqrt()
    }
}

/// Kinematic and dynamic snapshot of one agent.
#[derive(Clone, Debug)]
pub struct AgentSnapshot {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    /// End effector relative to the object, world frame.
    pub offset: Vector3<f64>,
    pub jo: Matrix6<f64>,
    pub jo_dot: Matrix6<f64>,
    pub v: Vector6<f64>,
}

/// Everything needed to evaluate the coupled dynamics at one state.
#[derive(Clone, Debug)]
pub struct Coupled {
    pub agents: Vec<AgentSnapshot>,
    pub terms: Vec<TaskTerms>,
    pub g: DMatrix<f64>,
    pub m_tilde: Matrix6<f64>,
    pub c_tilde: Matrix6<f64>,
    pub g_tilde: Vector6<f64>,
    pub d_tilde: Vector6<f64>,
    pub d_agents: Vec<Vector6<f64>>,
    pub d_object: Vector6<f64>,
}

/// The full cooperative system.
#[derive(Clone, Debug)]
pub struct System {
    pub object: ObjectModel,
    pub agents: Vec<AgentModel>,
    pub grasps: Vec<Grasp>,
    pub shares: Vec<LoadShare>,
    pub disturbance: DisturbanceModel,
}

impl System {
    /// Axes of motion: the x-z plane when every agent is planar, otherwise all six.
    pub fn axes(&self) -> &'static [usize] {
        if self.is_planar() {
            &PLANAR_AXES
        } else {
            &SPATIAL_AXES
        }
    }

    pub fn is_planar(&self) -> bool {
        self.agents
            .iter()
            .all(|a| matches!(a.kind, AgentKind::Planar3R(_)))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.agents.len();
        if n == 0 {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        if self.grasps.len() != n || self.shares.len() != n {
            return Err(Error::config("agents", "every agent needs a grasp and a load share"));
        }
        self.object.validate()?;
        for (i, a) in self.agents.iter().enumerate() {
            a.validate(i)?;
            if !(self.shares[i].m_star > 0.0) || self.shares[i].j_star.cholesky().is_none() {
                return Err(Error::config(
                    format!("agents[{i}].load_share"),
                    "m_star must be positive and j_star positive definite",
                ));
            }
        }
        let planar = self.is_planar();
        if !planar && self.agents.iter().any(|a| matches!(a.kind, AgentKind::Planar3R(_))) {
            return Err(Error::config("agents", "planar and spatial agents cannot be mixed"));
        }
        if planar {
            for (i, g) in self.grasps.iter().enumerate() {
                let r = g.rotation.rotation();
                if g.offset.y != 0.0 || (r[(1, 1)] - 1.0).abs() > 1e-12 {
                    return Err(Error::config(
                        format!("agents[{i}].grasp"),
                        "planar grasps must lie in the x-z plane and rotate about y only",
                    ));
                }
            }
        }
        let offsets: Vec<_> = self.grasps.iter().map(|g| g.offset).collect();
        let w = weighted_offset_sum(&offsets, &self.shares);
        if w.norm() > 1e-9 {
            return Err(Error::config(
                "agents.grasp.offset",
                format!("load-share weighted grasp offsets must sum to zero (got {w:?})"),
            ));
        }
        Ok(())
    }

    pub fn joints(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.n_joints()).collect()
    }

    pub fn offsets(&self, s: &ObjectState) -> Vec<Vector3<f64>> {
        world_offsets(&s.z.rotation(), &self.grasps)
    }

    /// Agent joint states and grasp Jacobians from the object state.
    pub fn kinematics(&self, s: &ObjectState) -> Result<Vec<AgentSnapshot>> {
        let offsets = self.offsets(s);
        let omega = s.omega();
        self.agents
            .iter()
            .enumerate()
            .map(|(i, agent)| {
                let p_e_o = offsets[i];
                let jo = object_to_agent_jacobian(&p_e_o);
                let jo_dot = object_to_agent_jacobian_dot(&p_e_o, &omega);
                let v = jo * s.v;
                let p_e = s.p + p_e_o;
                let z_e = quat_mul(&s.z, &self.grasps[i].rotation);
                let (q, qd) = agent.joints_from_end_effector(i, &p_e, &z_e, &s.rot_acc, &v)?;
                Ok(AgentSnapshot {
                    q,
                    qd,
                    offset: p_e_o,
                    jo,
                    jo_dot,
                    v,
                })
            })
            .collect()
    }

    /// Assembles `M~, C~, g~, d~` and the grasp matrix.
    pub fn coupled(&self, s: &ObjectState, t: f64) -> Result<Coupled> {
        let agents = self.kinematics(s)?;
        let r = s.z.rotation();
        let omega = s.omega();
        let mut m_tilde = self.object.mass_matrix(&r);
        let mut c_tilde = self.object.coriolis(&r, &omega);
        let mut g_tilde = self.object.gravity();
        let d_object = self.disturbance.object(s.pose_rate_norm(), &s.v, t);
        let mut d_tilde = d_object;
        let mut terms = Vec::with_capacity(agents.len());
        let mut d_agents = Vec::with_capacity(agents.len());
        for (i, snap) in agents.iter().enumerate() {
            let model = &self.agents[i];
            let tt = model.task_terms(i, &snap.q, &snap.qd)?;
            let d = model.embed_vector(&self.disturbance.agent(i, &snap.q, &snap.qd, t)) + model.friction(i, &snap.q, &snap.qd)?;
            let jt = snap.jo.transpose();
            m_tilde += jt * tt.m * snap.jo;
            c_tilde += jt * (tt.m * snap.jo_dot + tt.c * snap.jo);
            g_tilde += jt * tt.g;
            d_tilde += jt * d;
            terms.push(tt);
            d_agents.push(d);
        }
        let offsets: Vec<_> = agents.iter().map(|a| a.offset).collect();
        let g = grasp_matrix(&offsets)?;
        Ok(Coupled {
            agents,
            terms,
            g,
            m_tilde,
            c_tilde,
            g_tilde,
            d_tilde,
            d_agents,
            d_object,
        })
    }

    pub fn team(&self) -> TeamConstants {
        TeamConstants {
            grasps: self.grasps.clone(),
            shares: self.shares.clone(),
            axes: self.axes(),
        }
    }

    /// Agent-local sensing derived from the true state.
    pub fn local_views(&self, s: &ObjectState, agents: &[AgentSnapshot]) -> Vec<LocalView> {
        agents
            .iter()
            .enumerate()
            .map(|(i, snap)| LocalView {
                agent: i,
                q: snap.q.clone(),
                qd: snap.qd.clone(),
                p_e: s.p + snap.offset,
                z_e: quat_mul(&s.z, &self.grasps[i].rotation),
                v_e: snap.v,
            })
            .collect()
    }

    /// `G+_M` blocks at the current state.
    pub fn load_distribution(&self, s: &ObjectState) -> Result<(Vec<Matrix6<f64>>, DMatrix<f64>)> {
        load_distribution(&self.offsets(s), &self.shares)
    }

    /// Solves `M~ v_dot = G^T u - C~ v - g~ - d~` on the active axes.
    pub fn acceleration(&self, c: &Coupled, v: &Vector6<f64>, u: &[Vector6<f64>]) -> Vector6<f64> {
        let mut rhs = -c.c_tilde * v - c.g_tilde - c.d_tilde;
        for (snap, ui) in c.agents.iter().zip(u) {
            rhs += snap.jo.transpose() * ui;
        }
        solve_on_axes(&c.m_tilde, &rhs, self.axes())
    }

    /// Interaction wrenches `f_i = u_i - M_i v_i_dot - C_i v_i - g_i - d_i`.
    pub fn interaction_wrenches(&self, c: &Coupled, v: &Vector6<f64>, vdot: &Vector6<f64>, u: &[Vector6<f64>]) -> Vec<Vector6<f64>> {
        c.agents
            .iter()
            .enumerate()
            .map(|(i, snap)| {
                let vi_dot = snap.jo * vdot + snap.jo_dot * v;
                let tt = &c.terms[i];
                let mut f = u[i] - tt.m * vi_dot - tt.c * snap.v - tt.g - c.d_agents[i];
                for (k, fk) in f.iter_mut().enumerate() {
                    if !self.axes().contains(&k) {
                        *fk = 0.0;
                    }
                }
                f
            })
            .collect()
    }

    /// Kinetic plus potential energy of object and agents.
    pub fn energy(&self, s: &ObjectState) -> Result<f64> {
        let c = self.coupled(s, 0.0)?;
        let kinetic = 0.5 * s.v.dot(&(c.m_tilde * s.v));
        let mut potential = self.object.potential(&s.p);
        for (agent, snap) in self.agents.iter().zip(&c.agents) {
            potential += agent.potential(&snap.q);
        }
        Ok(kinetic + potential)
    }
}

/// Constants every agent receives offline: grasp geometry, load shares and motion axes.
#[derive(Clone, Debug)]
pub struct TeamConstants {
    pub grasps: Vec<Grasp>,
    pub shares: Vec<LoadShare>,
    pub axes: &'static [usize],
}

/// What agent `agent` senses about itself: joints and end-effector pose and twist.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalView {
    pub agent: usize,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub p_e: Vector3<f64>,
    pub z_e: UnitQuaternion,
    pub v_e: Vector6<f64>,
}

/// Object pose and twist reconstructed by one agent from its own view.
#[derive(Clone, Debug)]
pub struct ObjectEstimate {
    pub p: Vector3<f64>,
    pub z: UnitQuaternion,
    pub v: Vector6<f64>,
    pub r: nalgebra::Matrix3<f64>,
    /// All grasp offsets in the world frame.
    pub offsets: Vec<Vector3<f64>>,
}

impl ObjectEstimate {
    pub fn omega(&self) -> Vector3<f64> {
        self.v.fixed_rows::<3>(3).into()
    }

    pub fn pose_rate_norm(&self) -> f64 {
        let lin = self.v.fixed_rows::<3>(0).norm_squared();
        (lin + quat_derivative(&self.z, &self.omega()).norm_squared()).sqrt()
    }
}

impl TeamConstants {
    /// Object state from one agent's view via the rigid grasp.
    pub fn object_from_view(&self, view: &LocalView) -> ObjectEstimate {
        let grasp = &self.grasps[view.agent];
        let z = quat_mul(&view.z_e, &crate::spatial::quat_conj(&grasp.rotation));
        let r = z.rotation();
        let offsets = world_offsets(&r, &self.grasps);
        let own = offsets[view.agent];
        let omega: Vector3<f64> = view.v_e.fixed_rows::<3>(3).into();
        let lin: Vector3<f64> = view.v_e.fixed_rows::<3>(0).into();
        let v = crate::spatial::stack(&(lin + own.cross(&omega)), &omega);
        ObjectEstimate {
            p: view.p_e - own,
            z,
            v: mask(&v, self.axes),
            r,
            offsets,
        }
    }
}

/// Zeroes the components outside `axes`.
pub fn mask(v: &Vector6<f64>, axes: &[usize]) -> Vector6<f64> {
    let mut out = Vector6::zeros();
    for &i in axes {
        out[i] = v[i];
    }
    out
}

/// Solves `m x = rhs` restricted to `axes`, with zeros elsewhere.
pub fn solve_on_axes(m: &Matrix6<f64>, rhs: &Vector6<f64>, axes: &[usize]) -> Vector6<f64> {
    let k = axes.len();
    let mr = DMatrix::from_fn(k, k, |r, c| m[(axes[r], axes[c])]);
    let br = DVector::from_fn(k, |r, _| rhs[axes[r]]);
    let x = match mr.clone().cholesky() {
        Some(ch) => ch.solve(&br),
        None => mr.lu().solve(&br).unwrap_or_else(|| DVector::from_element(k, f64::NAN)),
    };
    let mut out = Vector6::zeros();
    for (r, &i) in axes.iter().enumerate() {
        out[i] = x[r];
    }
    out
}
