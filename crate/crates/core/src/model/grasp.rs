//! Rigid-grasp kinematics, grasp matrix and load distribution.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::spatial::{skew, UnitQuaternion};

/// Constant pose of one end effector relative to the object's center of mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Grasp {
    /// Position of the end effector relative to the object, in the object frame [m].
    pub offset: Vector3<f64>,
    /// Orientation of the end effector relative to the object.
    pub rotation: UnitQuaternion,
}

/// Load-sharing coefficients of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadShare {
    pub m_star: f64,
    pub j_star: Matrix3<f64>,
}

/// `J_Oi = [[I, -S(p)], [0, I]]` with `p` the end effector relative to the object (world frame).
pub fn object_to_agent_jacobian(p_e_o: &Vector3<f64>) -> Matrix6<f64> {
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(p_e_o)));
    j
}

/// Time derivative of `J_Oi` for an offset rotating with `omega`.
pub fn object_to_agent_jacobian_dot(p_e_o: &Vector3<f64>, omega: &Vector3<f64>) -> Matrix6<f64> {
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-skew(&omega.cross(p_e_o))));
    j
}

/// World-frame offsets `p_{Ei/O} = R_O offset_i`.
pub fn world_offsets(r_o: &Matrix3<f64>, grasps: &[Grasp]) -> Vec<Vector3<f64>> {
    grasps.iter().map(|g| r_o * g.offset).collect()
}

/// Stacked `G = [J_O1; ...; J_ON]` (6N x 6).
pub fn grasp_matrix(offsets: &[Vector3<f64>]) -> Result<DMatrix<f64>> {
    let n = offsets.len();
    let mut g = DMatrix::zeros(6 * n, 6);
    for (i, p) in offsets.iter().enumerate() {
        g.view_mut((6 * i, 0), (6, 6))
            .copy_from(&object_to_agent_jacobian(p));
    }
    let sv = g.clone().svd(false, false).singular_values;
    let tol = 1e-10 * sv.max().max(1.0);
    let rank = sv.iter().filter(|s| **s > tol).count();
    if rank < 6 {
        return Err(Error::RankDeficient { rank });
    }
    Ok(g)
}

/// Aggregate `J*_O = sum J*_i - sum m*_i S(p_{O/Ei})^2`.
pub fn aggregate_inertia(offsets: &[Vector3<f64>], shares: &[LoadShare]) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for (p, s) in offsets.iter().zip(shares) {
        let sp = skew(&(-p));
        j += s.j_star - s.m_star * sp * sp;
    }
    j
}

/// Per-agent distribution blocks `J_Mi` and their stack `G+_M` (6N x 6).
///
/// The top-right block is `m*_i S(p_{O/Ei}) (J*_O)^-1`; with this ordering
/// `G^T G+_M = I` holds for any positive definite `J*_i`.
pub fn load_distribution(offsets: &[Vector3<f64>], shares: &[LoadShare]) -> Result<(Vec<Matrix6<f64>>, DMatrix<f64>)> {
    let m_o: f64 = shares.iter().map(|s| s.m_star).sum();
    let jo = aggregate_inertia(offsets, shares);
    let jo_inv = jo.try_inverse().ok_or(Error::SingularJStar)?;
    if !jo_inv.iter().all(|v| v.is_finite()) || jo.determinant().abs() < 1e-14 {
        return Err(Error::SingularJStar);
    }
    let mut blocks = Vec::with_capacity(offsets.len());
    let mut stack = DMatrix::zeros(6 * offsets.len(), 6);
    for (i, (p, s)) in offsets.iter().zip(shares).enumerate() {
        let mut jm = Matrix6::zeros();
        jm.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(s.m_star / m_o * Matrix3::identity()));
        jm.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(s.m_star * skew(&(-p)) * jo_inv));
        jm.fixed_view_mut::<3, 3>(3, 3).copy_from(&(s.j_star * jo_inv));
        stack.view_mut((6 * i, 0), (6, 6)).copy_from(&jm);
        blocks.push(jm);
    }
    Ok((blocks, stack))
}

/// Internal-force term `(I - G+_M G^T) f` (6N).
pub fn internal_force_term(g: &DMatrix<f64>, gm: &DMatrix<f64>, f: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    f - gm * (g.transpose() * f)
}

/// Weighted center of the grasp points, which must vanish for a valid distribution.
pub fn weighted_offset_sum(offsets: &[Vector3<f64>], shares: &[LoadShare]) -> Vector3<f64> {
    offsets
        .iter()
        .zip(shares)
        .fold(Vector3::zeros(), |acc, (p, s)| acc + s.m_star * p)
}

/// Object-level wrench from stacked agent wrenches, `f_O = G^T f`.
pub fn object_wrench(g: &DMatrix<f64>, f: &nalgebra::DVector<f64>) -> Vector6<f64> {
    let w = g.transpose() * f;
    Vector6::from_column_slice(w.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::quat_mul;
    use nalgebra::DVector;
    use proptest::prelude::*;

    pub fn four_agent_offsets() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.2, 0.15, 0.0),
            Vector3::new(-0.2, 0.15, 0.0),
            Vector3::new(-0.2, -0.15, 0.0),
            Vector3::new(0.2, -0.15, 0.0),
        ]
    }

    pub fn four_agent_shares() -> Vec<LoadShare> {
        [0.6, 0.4, 0.75, 0.25]
            .iter()
            .map(|j| LoadShare {
                m_star: 1.0,
                j_star: *j * Matrix3::identity(),
            })
            .collect()
    }

    #[test]
    fn coincident_frames_give_identity() {
        assert_eq!(object_to_agent_jacobian(&Vector3::zeros()), Matrix6::identity());
        let g = grasp_matrix(&[Vector3::zeros()]).unwrap();
        assert_eq!(g, DMatrix::identity(6, 6));
    }

    #[test]
    fn grasp_transpose_sums_forces_and_moments() {
        // Free-body diagram: forces f1 at p1, f2 at p2, pure torques t1, t2.
        let p = [Vector3::new(0.1, 0.0, 0.0), Vector3::new(-0.1, 0.05, 0.0)];
        let f = [Vector3::new(0.0, 0.0, 3.0), Vector3::new(1.0, 0.0, 2.0)];
        let t = [Vector3::new(0.0, 0.2, 0.0), Vector3::new(0.1, 0.0, 0.0)];
        let g = grasp_matrix(&p).unwrap();
        let mut stacked = DVector::zeros(12);
        for i in 0..2 {
            for k in 0..3 {
                stacked[6 * i + k] = f[i][k];
                stacked[6 * i + 3 + k] = t[i][k];
            }
        }
        let w = object_wrench(&g, &stacked);
        let force = f[0] + f[1];
        let torque = t[0] + t[1] + p[0].cross(&f[0]) + p[1].cross(&f[1]);
        assert!((w.fixed_rows::<3>(0) - force).norm() < 1e-15);
        assert!((w.fixed_rows::<3>(3) - torque).norm() < 1e-15);
    }

    #[test]
    fn symmetric_pair_splits_pure_force_in_half() {
        let p = [Vector3::new(0.05, 0.0, 0.0), Vector3::new(-0.05, 0.0, 0.0)];
        let shares = vec![
            LoadShare { m_star: 1.0, j_star: 0.5 * Matrix3::identity() },
            LoadShare { m_star: 1.0, j_star: 0.5 * Matrix3::identity() },
        ];
        let (blocks, _) = load_distribution(&p, &shares).unwrap();
        let f = Vector6::new(1.0, -2.0, 4.0, 0.0, 0.0, 0.0);
        for b in &blocks {
            assert!((b * f - 0.5 * f).norm() < 1e-15);
        }
    }

    #[test]
    fn literal_block_ordering_breaks_right_inverse() {
        // `m* (J*_O)^-1 S(p)` in the top-right block only works when J*_O commutes with S(p).
        let offsets = vec![
            Vector3::new(0.3, 0.1, -0.05),
            Vector3::new(-0.2, 0.2, 0.1),
            Vector3::new(-0.1, -0.3, -0.05),
        ];
        let shares = vec![
            LoadShare { m_star: 1.0, j_star: 0.02 * Matrix3::identity() },
            LoadShare { m_star: 1.0, j_star: 0.01 * Matrix3::identity() },
            LoadShare { m_star: 1.0, j_star: 0.01 * Matrix3::identity() },
        ];
        let jo_inv = aggregate_inertia(&offsets, &shares).try_inverse().unwrap();
        let g = grasp_matrix(&offsets).unwrap();
        let mut lit = DMatrix::zeros(18, 6);
        for (i, (p, s)) in offsets.iter().zip(&shares).enumerate() {
            let mut jm = Matrix6::zeros();
            jm.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() / 3.0));
            jm.fixed_view_mut::<3, 3>(0, 3).copy_from(&(s.m_star * jo_inv * skew(&(-p))));
            jm.fixed_view_mut::<3, 3>(3, 3).copy_from(&(s.j_star * jo_inv));
            lit.view_mut((6 * i, 0), (6, 6)).copy_from(&jm);
        }
        assert!((g.transpose() * lit - DMatrix::<f64>::identity(6, 6)).norm() > 1e-3);
        let (_, gm) = load_distribution(&offsets, &shares).unwrap();
        assert!((g.transpose() * gm - DMatrix::<f64>::identity(6, 6)).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn right_inverse_for_four_agent_shares(q in prop::array::uniform4(-1.0..1.0f64)) {
            let r = UnitQuaternion::new(q[0] + 1.2, Vector3::new(q[1], q[2], q[3])).rotation();
            let offsets = world_offsets(&r, &four_agent_offsets().into_iter().map(|offset| Grasp { offset, rotation: UnitQuaternion::identity() }).collect::<Vec<_>>());
            let shares = four_agent_shares();
            prop_assert!(weighted_offset_sum(&offsets, &shares).norm() < 1e-14);
            let g = grasp_matrix(&offsets).unwrap();
            let (_, gm) = load_distribution(&offsets, &shares).unwrap();
            prop_assert!((g.transpose() * &gm - DMatrix::<f64>::identity(6, 6)).norm() < 1e-10);
            let f = DVector::from_fn(24, |i, _| ((i * 7919) % 13) as f64 - 6.0);
            let int = internal_force_term(&g, &gm, &f);
            prop_assert!((g.transpose() * int).norm() < 1e-10);
        }

        #[test]
        fn jacobian_norm_bound(p in prop::array::uniform3(-2.0..2.0f64)) {
            let p = Vector3::from(p);
            let n = object_to_agent_jacobian(&p).svd(false, false).singular_values.max();
            prop_assert!(n <= p.norm() + 1.0 + 1e-12);
        }

        #[test]
        fn jacobian_reproduces_end_effector_velocity(q in prop::array::uniform4(-1.0..1.0f64), v in prop::array::uniform6(-1.0..1.0f64), off in prop::array::uniform3(-0.5..0.5f64)) {
            // Integrate the object pose exactly for constant twist and differentiate p_E.
            let z0 = UnitQuaternion::new(q[0] + 1.2, Vector3::new(q[1], q[2], q[3]));
            let v = Vector6::from(v);
            let lin: Vector3<f64> = v.fixed_rows::<3>(0).into();
            let w: Vector3<f64> = v.fixed_rows::<3>(3).into();
            let off = Vector3::from(off);
            let pe = |t: f64| {
                let r = quat_mul(&UnitQuaternion::from_axis_angle(&w, w.norm() * t), &z0).rotation();
                lin * t + r * off
            };
            let h = 1e-5;
            let fd = (pe(h) - pe(-h)) / (2.0 * h);
            let ve = object_to_agent_jacobian(&(z0.rotation() * off)) * v;
            prop_assert!((fd - ve.fixed_rows::<3>(0)).norm() < 1e-5);
            // Time derivative of J_Oi against central differences.
            let jo = |t: f64| {
                let r = quat_mul(&UnitQuaternion::from_axis_angle(&w, w.norm() * t), &z0).rotation();
                object_to_agent_jacobian(&(r * off))
            };
            let jd = (jo(h) - jo(-h)) / (2.0 * h);
            prop_assert!((jd - object_to_agent_jacobian_dot(&(z0.rotation() * off), &w)).norm() < 1e-6);
        }
    }
}
