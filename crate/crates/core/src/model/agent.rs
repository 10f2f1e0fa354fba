//! Agent models: a planar three-revolute arm and a synthetic six-DOF
//! task-space agent. Both are Lagrangian systems that are linear in their
//! parameter vectors, with Coriolis matrices built from Christoffel symbols.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{wrap_angle, UnitQuaternion};

/// Standard gravity [m/s^2].
pub const GRAVITY: f64 = 9.81;

/// Task-space axes of a planar arm moving in the x-z plane (x, z, rotation about y).
pub const PLANAR_AXES: [usize; 3] = [0, 2, 4];
pub const SPATIAL_AXES: [usize; 6] = [0, 1, 2, 3, 4, 5];

/// Coriolis matrix from mass-matrix partials via Christoffel symbols of the first kind.
pub fn christoffel_coriolis(dm: &[DMatrix<f64>], qd: &DVector<f64>) -> DMatrix<f64> {
    let n = qd.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k];
            }
            c[(i, j)] = s;
        }
    }
    c
}

/// Physical description of one link of the planar arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarLink {
    /// Length [m].
    pub length: f64,
    /// Mass [kg].
    pub mass: f64,
    /// Distance of the center of mass from the proximal joint [m].
    pub com: f64,
    /// Inertia about the center of mass, about the joint axis [kg m^2].
    pub inertia: f64,
}

/// Three revolute joints rotating about the world y axis, moving in the x-z plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Planar3R {
    pub links: [PlanarLink; 3],
    /// Base position in the world frame [m].
    pub base: Vector3<f64>,
    /// +1 or -1: sign of the elbow angle chosen by inverse kinematics.
    pub elbow: f64,
    /// Viscous joint friction [N m s/rad].
    pub damping: Vector3<f64>,
}

/// Synthetic agent whose joint coordinates coincide with the task coordinates
/// (`J = I`), with `M(q) = A + sum_k sin(q_k) B_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic6D {
    pub a: Matrix6<f64>,
    pub b: [Matrix6<f64>; 6],
    /// Gravity load on the vertical task coordinate [N].
    pub weight: f64,
    /// Initial values of the three rotational joint coordinates [rad].
    pub q_rot0: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AgentKind {
    Planar3R(Planar3R),
    Synthetic6D(Synthetic6D),
}

/// One agent with its per-joint torque limits [N m].
#[derive(Clone, Debug, PartialEq)]
pub struct AgentModel {
    pub kind: AgentKind,
    pub torque_limits: Vec<f64>,
}

/// Task-space dynamics terms embedded in the 6-D wrench/twist space.
#[derive(Clone, Debug)]
pub struct TaskTerms {
    pub m: Matrix6<f64>,
    pub c: Matrix6<f64>,
    pub g: Vector6<f64>,
}

fn sym_index_pairs() -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(21);
    for i in 0..6 {
        for j in i..6 {
            v.push((i, j));
        }
    }
    v
}

impl Planar3R {
    /// Parameter vector `[P1, P2, P3, m2, m3, m1 c1, m2 c2, m3 c3, b1, b2, b3]`,
    /// with `Pk = Ik + mk ck^2` and `bk` the viscous joint friction.
    pub fn params(&self) -> DVector<f64> {
        let [l1, l2, l3] = self.links;
        DVector::from_vec(vec![
            l1.inertia + l1.mass * l1.com * l1.com,
            l2.inertia + l2.mass * l2.com * l2.com,
            l3.inertia + l3.mass * l3.com * l3.com,
            l2.mass,
            l3.mass,
            l1.mass * l1.com,
            l2.mass * l2.com,
            l3.mass * l3.com,
            self.damping[0],
            self.damping[1],
            self.damping[2],
        ])
    }

    fn lengths(&self) -> (f64, f64, f64) {
        (self.links[0].length, self.links[1].length, self.links[2].length)
    }

    fn lower_ones() -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0)
    }

    /// Kinetic-energy matrix in absolute link rates and its partials.
    fn w_matrix(&self, q: &DVector<f64>, th: &DVector<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
        let (l1, l2, _) = self.lengths();
        let (p1, p2, p3, m2, m3, _, m2c2, m3c3) =
            (th[0], th[1], th[2], th[3], th[4], th[5], th[6], th[7]);
        let alpha = m3 * l1 * l2 + m2c2 * l1;
        let beta = m3c3 * l1;
        let gamma = m3c3 * l2;
        let (s2, c2) = q[1].sin_cos();
        let (s3, c3) = q[2].sin_cos();
        let (s23, c23) = (q[1] + q[2]).sin_cos();
        let w11 = p1 + (m2 + m3) * l1 * l1;
        let w22 = p2 + m3 * l2 * l2;
        let w12 = alpha * c2;
        let w13 = beta * c23;
        let w23 = gamma * c3;
        let w = Matrix3::new(w11, w12, w13, w12, w22, w23, w13, w23, p3);
        let d1 = Matrix3::zeros();
        let a = -alpha * s2;
        let b = -beta * s23;
        let d2 = Matrix3::new(0.0, a, b, a, 0.0, 0.0, b, 0.0, 0.0);
        let g = -gamma * s3;
        let d3 = Matrix3::new(0.0, 0.0, b, 0.0, 0.0, g, b, g, 0.0);
        (w, [d1, d2, d3])
    }

    fn mass_parts(&self, q: &DVector<f64>, th: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let l = Self::lower_ones();
        let (w, dw) = self.w_matrix(q, th);
        let to_d = |m: Matrix3<f64>| DMatrix::from_iterator(3, 3, m.iter().cloned());
        let m = to_d(l.transpose() * w * l);
        let dm = dw.iter().map(|d| to_d(l.transpose() * d * l)).collect();
        (m, dm)
    }

    fn gravity_with(&self, q: &DVector<f64>, th: &DVector<f64>) -> DVector<f64> {
        let (l1, l2, _) = self.lengths();
        let (m2, m3, m1c1, m2c2, m3c3) = (th[3], th[4], th[5], th[6], th[7]);
        let phi1 = q[0];
        let phi2 = q[0] + q[1];
        let phi3 = phi2 + q[2];
        let d = Vector3::new(
            GRAVITY * phi1.cos() * (m1c1 + (m2 + m3) * l1),
            GRAVITY * phi2.cos() * (m2c2 + m3 * l2),
            GRAVITY * phi3.cos() * m3c3,
        );
        let g = Self::lower_ones().transpose() * d;
        DVector::from_column_slice(g.as_slice())
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        let th = self.params();
        let (l1, l2, _) = self.lengths();
        let (m2, m3, m1c1, m2c2, m3c3) = (th[3], th[4], th[5], th[6], th[7]);
        let phi1 = q[0];
        let phi2 = q[0] + q[1];
        let phi3 = phi2 + q[2];
        GRAVITY
            * (m1c1 * phi1.sin()
                + (m2 + m3) * l1 * phi1.sin()
                + m2c2 * phi2.sin()
                + m3 * l2 * phi2.sin()
                + m3c3 * phi3.sin())
    }

    /// In-plane end-effector position relative to the base and its angle.
    pub fn forward(&self, q: &DVector<f64>) -> (f64, f64, f64) {
        let (l1, l2, l3) = self.lengths();
        let p1 = q[0];
        let p2 = p1 + q[1];
        let p3 = p2 + q[2];
        (
            l1 * p1.cos() + l2 * p2.cos() + l3 * p3.cos(),
            l1 * p1.sin() + l2 * p2.sin() + l3 * p3.sin(),
            p3,
        )
    }

    /// Jacobian from joint rates to `(x_dot, z_dot, omega_y)` and its time derivative.
    pub fn jacobian(&self, q: &DVector<f64>, qd: &DVector<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
        let l = [self.links[0].length, self.links[1].length, self.links[2].length];
        let phi = [q[0], q[0] + q[1], q[0] + q[1] + q[2]];
        let phid = [qd[0], qd[0] + qd[1], qd[0] + qd[1] + qd[2]];
        let mut j = Matrix3::zeros();
        let mut jd = Matrix3::zeros();
        for col in 0..3 {
            for k in col..3 {
                let (s, c) = phi[k].sin_cos();
                j[(0, col)] -= l[k] * s;
                j[(1, col)] += l[k] * c;
                jd[(0, col)] -= l[k] * c * phid[k];
                jd[(1, col)] -= l[k] * s * phid[k];
            }
            j[(2, col)] = -1.0;
        }
        (j, jd)
    }

    /// Joint angles placing the end effector at world `(x, z)` with in-plane angle `alpha`.
    pub fn inverse(&self, agent: usize, x: f64, z: f64, alpha: f64) -> Result<DVector<f64>> {
        let (l1, l2, l3) = self.lengths();
        let wx = x - self.base.x - l3 * alpha.cos();
        let wz = z - self.base.z - l3 * alpha.sin();
        let c2 = (wx * wx + wz * wz - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if c2.abs() >= 1.0 {
            return Err(Error::KinematicSingularity { agent, det: 0.0 });
        }
        let q2 = self.elbow * c2.acos();
        let q1 = wz.atan2(wx) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        let q3 = wrap_angle(alpha - q1 - q2);
        Ok(DVector::from_vec(vec![wrap_angle(q1), q2, q3]))
    }
}

impl Synthetic6D {
    /// Flattened `[A (upper triangle), B_0..B_5 (upper triangles), weight]`.
    pub fn params(&self) -> DVector<f64> {
        let pairs = sym_index_pairs();
        let mut v = Vec::with_capacity(148);
        for &(i, j) in &pairs {
            v.push(self.a[(i, j)]);
        }
        for bk in &self.b {
            for &(i, j) in &pairs {
                v.push(bk[(i, j)]);
            }
        }
        v.push(self.weight);
        DVector::from_vec(v)
    }

    pub fn mass(&self, q: &Vector6<f64>) -> Matrix6<f64> {
        let mut m = self.a;
        for k in 0..6 {
            m += q[k].sin() * self.b[k];
        }
        m
    }

    pub fn mass_partials(&self, q: &Vector6<f64>) -> [Matrix6<f64>; 6] {
        std::array::from_fn(|k| q[k].cos() * self.b[k])
    }

    pub fn coriolis(&self, q: &Vector6<f64>, qd: &Vector6<f64>) -> Matrix6<f64> {
        let mut c = Matrix6::zeros();
        for k in 0..6 {
            let ck = q[k].cos();
            let bq = self.b[k] * qd;
            c += 0.5 * ck * (qd[k] * self.b[k] + bq * Vector6::ith(k, 1.0).transpose());
            c -= 0.5 * ck * Vector6::ith(k, 1.0) * bq.transpose();
        }
        c
    }

    pub fn gravity(&self) -> Vector6<f64> {
        Vector6::new(0.0, 0.0, self.weight, 0.0, 0.0, 0.0)
    }

    pub fn potential(&self, q: &Vector6<f64>) -> f64 {
        self.weight * q[2]
    }

    /// `Y` with `Y theta = M(q) a + C(q, qd) b + g`.
    pub fn regressor(&self, q: &Vector6<f64>, qd: &Vector6<f64>, a: &Vector6<f64>, b: &Vector6<f64>) -> DMatrix<f64> {
        let pairs = sym_index_pairs();
        let mut y = DMatrix::zeros(6, 148);
        for (col, &(i, j)) in pairs.iter().enumerate() {
            y[(i, col)] += a[j];
            if i != j {
                y[(j, col)] += a[i];
            }
        }
        for k in 0..6 {
            let (sk, ck) = q[k].sin_cos();
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let col = 21 * (k + 1) + p;
                // E a, E b and E qd for the symmetric unit matrix E at (i, j).
                let e_apply = |v: &Vector6<f64>| {
                    let mut r = Vector6::zeros();
                    r[i] += v[j];
                    if i != j {
                        r[j] += v[i];
                    }
                    r
                };
                let ea = e_apply(a);
                let eb = e_apply(b);
                let eq = e_apply(qd);
                let mut column = sk * ea + 0.5 * ck * (qd[k] * eb + b[k] * eq);
                column[k] -= 0.5 * ck * b.dot(&eq);
                for r in 0..6 {
                    y[(r, col)] = column[r];
                }
            }
        }
        y[(2, 147)] = 1.0;
        y
    }

    pub fn min_mass_eigen_margin(&self) -> f64 {
        let amin = self.a.symmetric_eigen().eigenvalues.min();
        let bsum: f64 = self
            .b
            .iter()
            .map(|b| b.symmetric_eigen().eigenvalues.amax())
            .sum();
        amin - bsum
    }
}

impl AgentModel {
    pub fn n_joints(&self) -> usize {
        match &self.kind {
            AgentKind::Planar3R(_) => 3,
            AgentKind::Synthetic6D(_) => 6,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            AgentKind::Planar3R(_) => "planar3r",
            AgentKind::Synthetic6D(_) => "synthetic6d",
        }
    }

    /// Task-space axes this agent can act on.
    pub fn axes(&self) -> &'static [usize] {
        match &self.kind {
            AgentKind::Planar3R(_) => &PLANAR_AXES,
            AgentKind::Synthetic6D(_) => &SPATIAL_AXES,
        }
    }

    /// True parameter vector.
    pub fn params(&self) -> DVector<f64> {
        match &self.kind {
            AgentKind::Planar3R(a) => a.params(),
            AgentKind::Synthetic6D(a) => a.params(),
        }
    }

    /// Joint-space mass matrix and its partials with respect to each joint.
    pub fn joint_mass(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        match &self.kind {
            AgentKind::Planar3R(a) => a.mass_parts(q, &a.params()),
            AgentKind::Synthetic6D(a) => {
                let q6 = Vector6::from_column_slice(q.as_slice());
                let to_d = |m: &Matrix6<f64>| DMatrix::from_column_slice(6, 6, m.as_slice());
                let m = to_d(&a.mass(&q6));
                let dm = a.mass_partials(&q6).iter().map(to_d).collect();
                (m, dm)
            }
        }
    }

    pub fn joint_coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            AgentKind::Planar3R(_) => christoffel_coriolis(&self.joint_mass(q).1, qd),
            AgentKind::Synthetic6D(a) => {
                let c = a.coriolis(
                    &Vector6::from_column_slice(q.as_slice()),
                    &Vector6::from_column_slice(qd.as_slice()),
                );
                DMatrix::from_column_slice(6, 6, c.as_slice())
            }
        }
    }

    pub fn joint_gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            AgentKind::Planar3R(a) => a.gravity_with(q, &a.params()),
            AgentKind::Synthetic6D(a) => DVector::from_column_slice(a.gravity().as_slice()),
        }
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        match &self.kind {
            AgentKind::Planar3R(a) => a.potential(q),
            AgentKind::Synthetic6D(a) => a.potential(&Vector6::from_column_slice(q.as_slice())),
        }
    }

    /// Joint-space regressor: `Y theta = M(q) a + C(q, qd) b + g(q)`, plus the viscous
    /// friction `B qd` for planar arms.
    pub fn joint_regressor(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        a: &DVector<f64>,
        b: &DVector<f64>,
    ) -> DMatrix<f64> {
        match &self.kind {
            AgentKind::Planar3R(arm) => {
                let np = 8;
                let mut y = DMatrix::zeros(3, np + 3);
                for k in 0..3 {
                    y[(k, np + k)] = qd[k];
                }
                for p in 0..np {
                    let th = DVector::from_fn(np, |r, _| if r == p { 1.0 } else { 0.0 });
                    let (m, dm) = arm.mass_parts(q, &th);
                    let c = christoffel_coriolis(&dm, qd);
                    let col = &m * a + &c * b + arm.gravity_with(q, &th);
                    y.set_column(p, &col);
                }
                y
            }
            AgentKind::Synthetic6D(s) => {
                let v = |x: &DVector<f64>| Vector6::from_column_slice(x.as_slice());
                s.regressor(&v(q), &v(qd), &v(a), &v(b))
            }
        }
    }

    /// Square Jacobian on the agent's task axes and its time derivative.
    pub fn jacobian(&self, q: &DVector<f64>, qd: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.kind {
            AgentKind::Planar3R(a) => {
                let (j, jd) = a.jacobian(q, qd);
                (
                    DMatrix::from_column_slice(3, 3, j.as_slice()),
                    DMatrix::from_column_slice(3, 3, jd.as_slice()),
                )
            }
            AgentKind::Synthetic6D(_) => (DMatrix::identity(6, 6), DMatrix::zeros(6, 6)),
        }
    }

    fn checked_jinv(&self, agent: usize, j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let det = (j * j.transpose()).determinant();
        if det < 1e-8 {
            return Err(Error::KinematicSingularity { agent, det });
        }
        j.clone()
            .try_inverse()
            .ok_or(Error::KinematicSingularity { agent, det })
    }

    fn embed_matrix(&self, m: &DMatrix<f64>) -> Matrix6<f64> {
        let ax = self.axes();
        let mut out = Matrix6::zeros();
        for (r, &i) in ax.iter().enumerate() {
            for (c, &j) in ax.iter().enumerate() {
                out[(i, j)] = m[(r, c)];
            }
        }
        out
    }

    pub fn embed_vector(&self, v: &DVector<f64>) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        for (r, &i) in self.axes().iter().enumerate() {
            out[i] = v[r];
        }
        out
    }

    pub fn restrict_vector(&self, v: &Vector6<f64>) -> DVector<f64> {
        DVector::from_iterator(self.axes().len(), self.axes().iter().map(|&i| v[i]))
    }

    /// Task-space `M_i, C_i, g_i` embedded in 6-D.
    pub fn task_terms(&self, agent: usize, q: &DVector<f64>, qd: &DVector<f64>) -> Result<TaskTerms> {
        let (mq, _) = self.joint_mass(q);
        let cq = self.joint_coriolis(q, qd);
        let gq = self.joint_gravity(q);
        let (j, jd) = self.jacobian(q, qd);
        let jinv = self.checked_jinv(agent, &j)?;
        let jit = jinv.transpose();
        let m = &jit * &mq * &jinv;
        let c = &jit * (&cq - &mq * &jinv * &jd) * &jinv;
        let g = &jit * gq;
        Ok(TaskTerms {
            m: self.embed_matrix(&m),
            c: self.embed_matrix(&c),
            g: self.embed_vector(&g),
        })
    }

    /// Task-space regressor (6 x l): `Y theta = M_i a + C_i b + g_i` for task-space `a`, `b`.
    pub fn task_regressor(
        &self,
        agent: usize,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        a: &Vector6<f64>,
        b: &Vector6<f64>,
    ) -> Result<DMatrix<f64>> {
        let (j, jd) = self.jacobian(q, qd);
        let jinv = self.checked_jinv(agent, &j)?;
        let bh = &jinv * self.restrict_vector(b);
        let ah = &jinv * (self.restrict_vector(a) - &jd * &bh);
        let yq = self.joint_regressor(q, qd, &ah, &bh);
        let yt = jinv.transpose() * yq;
        let mut out = DMatrix::zeros(6, yt.ncols());
        for (r, &i) in self.axes().iter().enumerate() {
            out.set_row(i, &yt.row(r));
        }
        Ok(out)
    }

    /// Task-space wrench of the viscous joint friction, `J^-T (b .* qd)`.
    pub fn friction(&self, agent: usize, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Vector6<f64>> {
        match &self.kind {
            AgentKind::Planar3R(a) if a.damping.iter().any(|b| *b != 0.0) => {
                let (j, _) = self.jacobian(q, qd);
                let jinv = self.checked_jinv(agent, &j)?;
                let tau = DVector::from_iterator(3, (0..3).map(|k| a.damping[k] * qd[k]));
                Ok(self.embed_vector(&(jinv.transpose() * tau)))
            }
            _ => Ok(Vector6::zeros()),
        }
    }

    /// Joint torques `tau = J^T u`.
    pub fn torques(&self, q: &DVector<f64>, u: &Vector6<f64>) -> DVector<f64> {
        let (j, _) = self.jacobian(q, &DVector::zeros(self.n_joints()));
        j.transpose() * self.restrict_vector(u)
    }

    /// Joint state from the end-effector pose and twist.
    ///
    /// `rot_acc` is the integral of the object's angular velocity, used by the
    /// synthetic agent's rotational coordinates.
    pub fn joints_from_end_effector(
        &self,
        agent: usize,
        p_e: &Vector3<f64>,
        z_e: &UnitQuaternion,
        rot_acc: &Vector3<f64>,
        v_e: &Vector6<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        match &self.kind {
            AgentKind::Planar3R(arm) => {
                let r = z_e.rotation();
                let alpha = r[(2, 0)].atan2(r[(0, 0)]);
                let q = arm.inverse(agent, p_e.x, p_e.z, alpha)?;
                let (j, _) = arm.jacobian(&q, &DVector::zeros(3));
                let jd = DMatrix::from_column_slice(3, 3, j.as_slice());
                let jinv = self.checked_jinv(agent, &jd)?;
                let qd = jinv * self.restrict_vector(v_e);
                Ok((q, qd))
            }
            AgentKind::Synthetic6D(s) => {
                let rot = s.q_rot0 + rot_acc;
                let q = DVector::from_vec(vec![p_e.x, p_e.y, p_e.z, rot.x, rot.y, rot.z]);
                Ok((q, DVector::from_column_slice(v_e.as_slice())))
            }
        }
    }

    /// Task pose of a joint configuration (planar: world position; synthetic: coordinates).
    pub fn forward_position(&self, q: &DVector<f64>) -> Vector3<f64> {
        match &self.kind {
            AgentKind::Planar3R(arm) => {
                let (x, z, _) = arm.forward(q);
                Vector3::new(arm.base.x + x, arm.base.y, arm.base.z + z)
            }
            AgentKind::Synthetic6D(_) => Vector3::new(q[0], q[1], q[2]),
        }
    }

    pub fn validate(&self, agent: usize) -> Result<()> {
        let key = format!("agents[{agent}]");
        if self.torque_limits.len() != self.n_joints() {
            return Err(Error::config(
                format!("{key}.torque_limits"),
                format!("expected {} entries", self.n_joints()),
            ));
        }
        if self.torque_limits.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config(format!("{key}.torque_limits"), "limits must be positive"));
        }
        match &self.kind {
            AgentKind::Planar3R(a) => {
                for (k, l) in a.links.iter().enumerate() {
                    if !(l.length > 0.0 && l.mass > 0.0 && l.inertia > 0.0 && l.com >= 0.0) {
                        return Err(Error::config(
                            format!("{key}.links[{k}]"),
                            "length, mass and inertia must be positive",
                        ));
                    }
                }
                if a.elbow != 1.0 && a.elbow != -1.0 {
                    return Err(Error::config(format!("{key}.elbow"), "must be 1 or -1"));
                }
                if a.damping.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
                    return Err(Error::config(format!("{key}.damping"), "must be non-negative"));
                }
            }
            AgentKind::Synthetic6D(s) => {
                if (s.a - s.a.transpose()).norm() > 0.0 || s.b.iter().any(|b| (b - b.transpose()).norm() > 0.0) {
                    return Err(Error::config(format!("{key}.inertia"), "matrices must be symmetric"));
                }
                if s.min_mass_eigen_margin() <= 0.0 {
                    return Err(Error::config(
                        format!("{key}.inertia"),
                        "A must dominate the sum of |B_k| to keep M(q) positive definite",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn widowx_like(base_x: f64, elbow: f64) -> AgentModel {
        let link = |length: f64, mass: f64| PlanarLink {
            length,
            mass,
            com: 0.5 * length,
            inertia: mass * length * length / 12.0,
        };
        AgentModel {
            kind: AgentKind::Planar3R(Planar3R {
                links: [link(0.15, 0.12), link(0.15, 0.10), link(0.07, 0.05)],
                base: Vector3::new(base_x, 0.0, 0.0),
                elbow,
                damping: Vector3::zeros(),
            }),
            torque_limits: vec![3.0, 1.25, 1.25],
        }
    }

    pub fn synthetic() -> AgentModel {
        let a = Matrix6::from_diagonal(&Vector6::new(2.0, 2.2, 1.8, 0.3, 0.35, 0.25))
            + Matrix6::from_fn(|i, j| if i != j { 0.01 * ((i + 2 * j) % 3) as f64 + 0.01 * ((j + 2 * i) % 3) as f64 } else { 0.0 });
        let b = std::array::from_fn(|k| {
            Matrix6::from_fn(|i, j| 0.005 * (((i + j + k) % 4) as f64 - 1.5))
        });
        AgentModel {
            kind: AgentKind::Synthetic6D(Synthetic6D {
                a,
                b,
                weight: 3.0,
                q_rot0: Vector3::new(0.1, -0.2, 0.3),
            }),
            torque_limits: vec![150.0; 6],
        }
    }

    fn vec_strategy(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
        prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
    }

    #[test]
    fn planar_at_rest_without_gravity_terms() {
        let agent = widowx_like(0.0, 1.0);
        let q = DVector::from_vec(vec![0.3, 0.8, -0.5]);
        let c = agent.joint_coriolis(&q, &DVector::zeros(3));
        assert_eq!(c * DVector::<f64>::zeros(3), DVector::zeros(3));
        // Vertical arm pointing straight up carries no gravity torque.
        let up = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        assert!(agent.joint_gravity(&up).norm() < 1e-14);
    }

    #[test]
    fn planar_inverse_kinematics_round_trip() {
        let agent = widowx_like(0.0, 1.0);
        let AgentKind::Planar3R(arm) = &agent.kind else { unreachable!() };
        let q = DVector::from_vec(vec![0.4, 0.9, -1.1]);
        let (x, z, alpha) = arm.forward(&q);
        let back = arm.inverse(0, x, z, alpha).unwrap();
        assert!((back - q).norm() < 1e-12);
    }

    #[test]
    fn planar_friction_columns_and_wrench() {
        let mut agent = widowx_like(0.0, 1.0);
        let AgentKind::Planar3R(arm) = &mut agent.kind else { unreachable!() };
        arm.damping = Vector3::new(0.9, 0.43, 0.2);
        let q = DVector::from_vec(vec![0.4, 0.9, -1.1]);
        let qd = DVector::from_vec(vec![0.3, -0.7, 1.2]);
        let a = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let y = agent.joint_regressor(&q, &qd, &a, &qd);
        let direct = agent.joint_mass(&q).0 * &a + agent.joint_coriolis(&q, &qd) * &qd + agent.joint_gravity(&q)
            + DVector::from_vec(vec![0.9 * 0.3, -0.43 * 0.7, 0.2 * 1.2]);
        assert!((y * agent.params() - direct).norm() < 1e-12);
        // The friction wrench maps back to the joint torques through J^T.
        let w = agent.friction(0, &q, &qd).unwrap();
        let tau = agent.torques(&q, &w);
        assert!((tau - DVector::from_vec(vec![0.27, -0.301, 0.24])).norm() < 1e-12);
    }

    #[test]
    fn planar_energy_conserved_unforced() {
        // Joint-space RK4 of the free arm: M qdd = -C qd - g.
        let agent = widowx_like(0.0, 1.0);
        let f = |q: &DVector<f64>, qd: &DVector<f64>| {
            let (m, _) = agent.joint_mass(q);
            let rhs = -agent.joint_coriolis(q, qd) * qd - agent.joint_gravity(q);
            m.lu().solve(&rhs).unwrap()
        };
        let energy = |q: &DVector<f64>, qd: &DVector<f64>| {
            0.5 * qd.dot(&(agent.joint_mass(q).0 * qd)) + agent.potential(q)
        };
        let mut q = DVector::from_vec(vec![0.2, 0.5, -0.3]);
        let mut qd = DVector::from_vec(vec![0.5, -0.3, 0.8]);
        let e0 = energy(&q, &qd);
        let h = 1e-4;
        for _ in 0..100_000 {
            let k1q = qd.clone();
            let k1v = f(&q, &qd);
            let k2q = &qd + &k1v * (h / 2.0);
            let k2v = f(&(&q + &k1q * (h / 2.0)), &k2q);
            let k3q = &qd + &k2v * (h / 2.0);
            let k3v = f(&(&q + &k2q * (h / 2.0)), &k3q);
            let k4q = &qd + &k3v * h;
            let k4v = f(&(&q + &k3q * h), &k4q);
            q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
            qd += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        }
        assert!((energy(&q, &qd) - e0).abs() < 1e-6, "drift {}", energy(&q, &qd) - e0);
    }

    fn skew_residual(agent: &AgentModel, q: &DVector<f64>, qd: &DVector<f64>, x: &DVector<f64>) -> f64 {
        // Joint-space M_dot by central differences along qd.
        let h = 1e-6;
        let mp = agent.joint_mass(&(q + qd * h)).0;
        let mm = agent.joint_mass(&(q - qd * h)).0;
        let mdot = (mp - mm) / (2.0 * h);
        let n = mdot - agent.joint_coriolis(q, qd) * 2.0;
        x.dot(&(n * x)).abs()
    }

    fn task_skew_residual(agent: &AgentModel, q: &DVector<f64>, qd: &DVector<f64>, x: &Vector6<f64>) -> f64 {
        let h = 1e-6;
        let tp = agent.task_terms(0, &(q + qd * h), qd).unwrap();
        let tm = agent.task_terms(0, &(q - qd * h), qd).unwrap();
        let mdot = (tp.m - tm.m) / (2.0 * h);
        let t = agent.task_terms(0, q, qd).unwrap();
        x.dot(&((mdot - 2.0 * t.c) * x)).abs()
    }

    fn direct_joint_dynamics(agent: &AgentModel, q: &DVector<f64>, qd: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        agent.joint_mass(q).0 * a + agent.joint_coriolis(q, qd) * b + agent.joint_gravity(q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn planar_mass_spd_and_skew(q in vec_strategy(3, -1.5, 1.5), qd in vec_strategy(3, -2.0, 2.0), x in vec_strategy(3, -1.0, 1.0)) {
            let agent = widowx_like(0.0, 1.0);
            let m = agent.joint_mass(&q).0;
            prop_assert!(m.clone().cholesky().is_some());
            prop_assert!((&m - m.transpose()).norm() < 1e-15);
            prop_assert!(skew_residual(&agent, &q, &qd, &x) < 1e-6);
        }

        #[test]
        fn planar_task_space_skew(q1 in 0.2..1.2f64, q2 in 0.4..1.8f64, q3 in -1.5..-0.3f64, qd in vec_strategy(3, -1.0, 1.0), x in prop::array::uniform6(-1.0..1.0f64)) {
            let agent = widowx_like(0.0, 1.0);
            let q = DVector::from_vec(vec![q1, q2, q3]);
            let x = agent.embed_vector(&agent.restrict_vector(&Vector6::from(x)));
            prop_assert!(task_skew_residual(&agent, &q, &qd, &x) < 1e-6);
        }

        #[test]
        fn synthetic_mass_spd_and_skew(q in vec_strategy(6, -3.0, 3.0), qd in vec_strategy(6, -2.0, 2.0), x in vec_strategy(6, -1.0, 1.0)) {
            let agent = synthetic();
            prop_assert!(agent.joint_mass(&q).0.cholesky().is_some());
            prop_assert!(skew_residual(&agent, &q, &qd, &x) < 1e-6);
            let AgentKind::Synthetic6D(s) = &agent.kind else { unreachable!() };
            let generic = christoffel_coriolis(&agent.joint_mass(&q).1, &qd);
            prop_assert!((generic - agent.joint_coriolis(&q, &qd)).norm() < 1e-12);
            prop_assert!(s.min_mass_eigen_margin() > 0.0);
        }

        #[test]
        fn joint_regressors_match_direct_assembly(q in vec_strategy(6, -3.0, 3.0), qd in vec_strategy(6, -2.0, 2.0), a in vec_strategy(6, -2.0, 2.0), b in vec_strategy(6, -2.0, 2.0)) {
            let s = synthetic();
            let y = s.joint_regressor(&q, &qd, &a, &b);
            prop_assert!((y * s.params() - direct_joint_dynamics(&s, &q, &qd, &a, &b)).norm() < 1e-10);
            let p = widowx_like(0.0, 1.0);
            let (q3, qd3, a3, b3) = (q.rows(0, 3).into_owned(), qd.rows(0, 3).into_owned(), a.rows(0, 3).into_owned(), b.rows(0, 3).into_owned());
            let y = p.joint_regressor(&q3, &qd3, &a3, &b3);
            prop_assert!((y * p.params() - direct_joint_dynamics(&p, &q3, &qd3, &a3, &b3)).norm() < 1e-10);
        }

        #[test]
        fn task_regressor_matches_task_terms(q1 in 0.2..1.2f64, q2 in 0.4..1.8f64, q3 in -1.5..-0.3f64, qd in vec_strategy(3, -1.0, 1.0), a in prop::array::uniform6(-2.0..2.0f64), b in prop::array::uniform6(-2.0..2.0f64)) {
            let agent = widowx_like(0.0, 1.0);
            let q = DVector::from_vec(vec![q1, q2, q3]);
            let (a, b) = (Vector6::from(a), Vector6::from(b));
            let t = agent.task_terms(0, &q, &qd).unwrap();
            let direct = t.m * a + t.c * b + t.g;
            let y = agent.task_regressor(0, &q, &qd, &a, &b).unwrap();
            prop_assert!((y * agent.params() - DVector::from_column_slice(direct.as_slice())).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_reference_without_gravity_gives_zero_regressor_output() {
        let mut agent = synthetic();
        if let AgentKind::Synthetic6D(s) = &mut agent.kind {
            s.weight = 0.0;
        }
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let qd = DVector::from_vec(vec![1.0; 6]);
        let z = DVector::zeros(6);
        let y = agent.joint_regressor(&q, &qd, &z, &z);
        assert!((y * agent.params()).norm() < 1e-15);
    }

    #[test]
    fn kinematic_singularity_reported() {
        let agent = widowx_like(0.0, 1.0);
        let q = DVector::from_vec(vec![0.3, 0.0, 0.0]);
        let err = agent.task_terms(2, &q, &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::KinematicSingularity { agent: 2, .. }));
    }
}
