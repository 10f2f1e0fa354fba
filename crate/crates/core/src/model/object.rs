//! Rigid object dynamics in Newton-Euler form.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};

use crate::model::agent::GRAVITY;
use crate::spatial::skew;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    /// Mass [kg].
    pub mass: f64,
    /// Inertia about the center of mass in the object frame [kg m^2].
    pub inertia: Matrix3<f64>,
}

/// Symmetric unit matrices matching `[Ixx, Ixy, Ixz, Iyy, Iyz, Izz]`.
fn inertia_basis() -> [Matrix3<f64>; 6] {
    let e = |i: usize, j: usize| {
        let mut m = Matrix3::zeros();
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
        m
    };
    [e(0, 0), e(0, 1), e(0, 2), e(1, 1), e(1, 2), e(2, 2)]
}

impl ObjectModel {
    /// `[m, Ixx, Ixy, Ixz, Iyy, Iyz, Izz]`.
    pub fn params(&self) -> Vec<f64> {
        let i = &self.inertia;
        vec![self.mass, i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 1)], i[(1, 2)], i[(2, 2)]]
    }

    pub fn world_inertia(&self, r: &Matrix3<f64>) -> Matrix3<f64> {
        r * self.inertia * r.transpose()
    }

    pub fn mass_matrix(&self, r: &Matrix3<f64>) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.mass * Matrix3::identity()));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.world_inertia(r));
        m
    }

    /// `C_O = diag(0, S(omega) R I R^T)`, so that `M_dot - 2 C` is skew symmetric.
    pub fn coriolis(&self, r: &Matrix3<f64>, omega: &Vector3<f64>) -> Matrix6<f64> {
        let mut c = Matrix6::zeros();
        c.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(skew(omega) * self.world_inertia(r)));
        c
    }

    pub fn gravity(&self) -> Vector6<f64> {
        Vector6::new(0.0, 0.0, self.mass * GRAVITY, 0.0, 0.0, 0.0)
    }

    pub fn potential(&self, p: &Vector3<f64>) -> f64 {
        self.mass * GRAVITY * p.z
    }

    pub fn regressor(
        &self,
        r: &Matrix3<f64>,
        omega: &Vector3<f64>,
        a: &Vector6<f64>,
        b: &Vector6<f64>,
    ) -> DMatrix<f64> {
        object_regressor(r, omega, a, b)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.mass > 0.0) {
            return Err(crate::Error::config("object.mass", "must be positive"));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 0.0
            || self.inertia.cholesky().is_none()
        {
            return Err(crate::Error::config("object.inertia", "must be symmetric positive definite"));
        }
        Ok(())
    }
}

/// `Y_O` with `Y_O theta_O = M_O a + C_O b + g_O`; depends only on the motion, not on the parameters.
pub fn object_regressor(
    r: &Matrix3<f64>,
    omega: &Vector3<f64>,
    a: &Vector6<f64>,
    b: &Vector6<f64>,
) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(6, 7);
    let lin = a.fixed_rows::<3>(0) + Vector3::new(0.0, 0.0, GRAVITY);
    for k in 0..3 {
        y[(k, 0)] = lin[k];
    }
    let aa: Vector3<f64> = a.fixed_rows::<3>(3).into();
    let ba: Vector3<f64> = b.fixed_rows::<3>(3).into();
    let (ra, rb) = (r.transpose() * aa, r.transpose() * ba);
    let sw = skew(omega);
    for (p, e) in inertia_basis().iter().enumerate() {
        let col = r * e * ra + sw * r * e * rb;
        for k in 0..3 {
            y[(3 + k, 1 + p)] = col[k];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::UnitQuaternion;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn object() -> ObjectModel {
        ObjectModel {
            mass: 0.8,
            inertia: Matrix3::new(0.02, 0.001, 0.0, 0.001, 0.03, -0.002, 0.0, -0.002, 0.025),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn regressor_matches_direct(q in prop::array::uniform4(-1.0..1.0f64), w in prop::array::uniform3(-2.0..2.0f64), a in prop::array::uniform6(-2.0..2.0f64), b in prop::array::uniform6(-2.0..2.0f64)) {
            let o = object();
            let r = UnitQuaternion::new(q[0] + 1.5, Vector3::new(q[1], q[2], q[3])).rotation();
            let (w, a, b) = (Vector3::from(w), Vector6::from(a), Vector6::from(b));
            let direct = o.mass_matrix(&r) * a + o.coriolis(&r, &w) * b + o.gravity();
            let y = o.regressor(&r, &w, &a, &b) * DVector::from_vec(o.params());
            prop_assert!((y - DVector::from_column_slice(direct.as_slice())).norm() < 1e-10);
        }

        #[test]
        fn skew_property(q in prop::array::uniform4(-1.0..1.0f64), w in prop::array::uniform3(-2.0..2.0f64), x in prop::array::uniform6(-1.0..1.0f64)) {
            // R(t) = exp(S(w) t) R0 rotates with inertial angular velocity w.
            let o = object();
            let z0 = UnitQuaternion::new(q[0] + 1.5, Vector3::new(q[1], q[2], q[3]));
            let w = Vector3::from(w);
            let rot = |t: f64| crate::spatial::quat_mul(&UnitQuaternion::from_axis_angle(&w, w.norm() * t), &z0).rotation();
            let h = 1e-6;
            let mdot = (o.mass_matrix(&rot(h)) - o.mass_matrix(&rot(-h))) / (2.0 * h);
            let n = mdot - 2.0 * o.coriolis(&rot(0.0), &w);
            let x = Vector6::from(x);
            prop_assert!(x.dot(&(n * x)).abs() < 1e-8);
        }
    }

    #[test]
    fn doubling_mass_doubles_gravity_block() {
        let mut o = object();
        let r = Matrix3::identity();
        let z = Vector6::zeros();
        let y1 = o.regressor(&r, &Vector3::zeros(), &z, &z) * DVector::from_vec(o.params());
        o.mass *= 2.0;
        let y2 = o.regressor(&r, &Vector3::zeros(), &z, &z) * DVector::from_vec(o.params());
        assert!((y2[2] - 2.0 * y1[2]).abs() < 1e-12);
        assert!(y1[2] > 0.0);
    }
}
