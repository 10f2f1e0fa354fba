//! Rotation, unit-quaternion and representation-Jacobian algebra.
//!
//! Angular velocities are expressed in the inertial frame, so that
//! `R_dot = S(omega) R` and `zeta_dot = 0.5 E(zeta) omega` with
//! `E(zeta) = [-eps^T; phi I - S(eps)]`. Euler angles follow the Z-Y-X
//! convention `R = Rz(yaw) Ry(pitch) Rx(roll)`.

use nalgebra::{Matrix3, Matrix4x3, Matrix6, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pitch values closer than this to +-pi/2 are treated as singular.
pub const PITCH_SINGULAR_TOL: f64 = 1e-9;

/// `S(a)` with `S(a) b = a x b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Unit quaternion `[phi, eps]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub phi: f64,
    pub eps: Vector3<f64>,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self {
            phi: 1.0,
            eps: Vector3::zeros(),
        }
    }

    /// Builds a quaternion and normalizes it.
    pub fn new(phi: f64, eps: Vector3<f64>) -> Self {
        let mut q = Self { phi, eps };
        q.renormalize();
        q
    }

    /// Builds from components without normalizing.
    pub fn from_parts_unchecked(phi: f64, eps: Vector3<f64>) -> Self {
        Self { phi, eps }
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], Vector3::new(v[1], v[2], v[3]))
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.phi, self.eps.x, self.eps.y, self.eps.z)
    }

    pub fn norm(&self) -> f64 {
        (self.phi * self.phi + self.eps.norm_squared()).sqrt()
    }

    pub fn renormalize(&mut self) {
        let n = self.norm();
        self.phi /= n;
        self.eps /= n;
    }

    pub fn negated(&self) -> Self {
        Self {
            phi: -self.phi,
            eps: -self.eps,
        }
    }

    /// Rotation from an axis (need not be unit) and angle.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let h = 0.5 * angle;
        Self::new(h.cos(), axis / n * h.sin())
    }

    /// Rotation matrix of the (active) rotation.
    pub fn rotation(&self) -> Matrix3<f64> {
        let e = self.eps;
        (self.phi * self.phi - e.norm_squared()) * Matrix3::identity()
            + 2.0 * e * e.transpose()
            + 2.0 * self.phi * skew(&e)
    }
}

/// Hamilton product `z1 (x) z2`.
pub fn quat_mul(z1: &UnitQuaternion, z2: &UnitQuaternion) -> UnitQuaternion {
    let phi = z1.phi * z2.phi - z1.eps.dot(&z2.eps);
    let eps = z1.phi * z2.eps + z2.phi * z1.eps + z1.eps.cross(&z2.eps);
    UnitQuaternion::new(phi, eps)
}

pub fn quat_conj(z: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        phi: z.phi,
        eps: -z.eps,
    }
}

/// `E(zeta) = [-eps^T; phi I - S(eps)]`.
pub fn e_matrix(z: &UnitQuaternion) -> Matrix4x3<f64> {
    let lower = z.phi * Matrix3::identity() - skew(&z.eps);
    let mut e = Matrix4x3::zeros();
    e.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-z.eps.transpose()));
    e.fixed_view_mut::<3, 3>(1, 0).copy_from(&lower);
    e
}

/// `zeta_dot = 0.5 E(zeta) omega`.
pub fn quat_derivative(z: &UnitQuaternion, omega: &Vector3<f64>) -> Vector4<f64> {
    0.5 * e_matrix(z) * omega
}

/// `omega = 2 E(zeta)^T zeta_dot`.
pub fn omega_from_derivative(z: &UnitQuaternion, zdot: &Vector4<f64>) -> Vector3<f64> {
    2.0 * e_matrix(z).transpose() * zdot
}

/// Z-Y-X Euler angles.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    /// `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }
}

/// Quaternion of a Z-Y-X Euler triple without sign canonicalization.
///
/// Continuous in the angles, so sampling a smooth Euler path yields a smooth
/// quaternion path.
pub fn quat_from_euler_continuous(eta: &EulerAngles) -> UnitQuaternion {
    let ex = UnitQuaternion::from_axis_angle(&Vector3::x(), eta.roll);
    let ey = UnitQuaternion::from_axis_angle(&Vector3::y(), eta.pitch);
    let ez = UnitQuaternion::from_axis_angle(&Vector3::z(), eta.yaw);
    quat_mul(&ez, &quat_mul(&ey, &ex))
}

/// Quaternion of a Z-Y-X Euler triple, canonicalized to `phi >= 0`.
pub fn quat_from_euler(eta: &EulerAngles) -> UnitQuaternion {
    let q = quat_from_euler_continuous(eta);
    if q.phi < 0.0 {
        q.negated()
    } else {
        q
    }
}

/// Z-Y-X Euler angles of a rotation matrix.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> Result<EulerAngles> {
    let eta = euler_from_rotation_unchecked(r);
    if std::f64::consts::FRAC_PI_2 - eta.pitch.abs() < PITCH_SINGULAR_TOL {
        return Err(Error::RepresentationSingularity { pitch: eta.pitch });
    }
    Ok(eta)
}

/// Euler angles without the singularity check; roll and yaw are arbitrary at the singularity.
pub fn euler_from_rotation_unchecked(r: &Matrix3<f64>) -> EulerAngles {
    let pitch = (-r[(2, 0)]).atan2((r[(0, 0)].powi(2) + r[(1, 0)].powi(2)).sqrt());
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    EulerAngles::new(roll, pitch, yaw)
}

pub fn euler_from_quat(z: &UnitQuaternion) -> Result<EulerAngles> {
    euler_from_rotation(&z.rotation())
}

/// Orientation error `e_zeta = zeta_d (x) zeta_o^+`, in expanded form.
pub fn quat_error(z_d: &UnitQuaternion, z_o: &UnitQuaternion) -> UnitQuaternion {
    let phi = z_o.phi * z_d.phi + z_o.eps.dot(&z_d.eps);
    let eps = z_o.phi * z_d.eps - z_d.phi * z_o.eps + skew(&z_o.eps) * z_d.eps;
    UnitQuaternion::from_parts_unchecked(phi, eps)
}

/// `T(eta)` with `omega = T(eta) eta_dot`.
pub fn euler_rate_matrix(eta: &EulerAngles) -> Matrix3<f64> {
    let (sp, cp) = eta.pitch.sin_cos();
    let (sy, cy) = eta.yaw.sin_cos();
    Matrix3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0)
}

/// `T(eta)^-1`, so that `eta_dot = T(eta)^-1 omega`.
pub fn euler_rate_matrix_inv(eta: &EulerAngles) -> Result<Matrix3<f64>> {
    if std::f64::consts::FRAC_PI_2 - eta.pitch.abs() < PITCH_SINGULAR_TOL {
        return Err(Error::RepresentationSingularity { pitch: eta.pitch });
    }
    let (sp, cp) = eta.pitch.sin_cos();
    let (sy, cy) = eta.yaw.sin_cos();
    Ok(Matrix3::new(
        cy / cp,
        sy / cp,
        0.0,
        -sy,
        cy,
        0.0,
        cy * sp / cp,
        sy * sp / cp,
        1.0,
    ))
}

/// Object representation Jacobian `J_O(eta) = diag(I, T(eta)^-1)`, `x_dot = J_O v`.
pub fn repr_jacobian(eta: &EulerAngles) -> Result<Matrix6<f64>> {
    let tinv = euler_rate_matrix_inv(eta)?;
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&tinv);
    Ok(j)
}

/// `J_O(eta)^-1 = diag(I, T(eta))`; defined everywhere.
pub fn repr_jacobian_inv(eta: &EulerAngles) -> Matrix6<f64> {
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&euler_rate_matrix(eta));
    j
}

/// Closed form of `||J_O(eta)||` in terms of the pitch.
pub fn repr_jacobian_norm_bound(pitch: f64) -> f64 {
    let s = pitch.sin().abs();
    ((s + 1.0) / (1.0 - s * s)).sqrt()
}

/// Linear and angular velocity.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.linear, &self.angular)
    }
}

/// Force and torque.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.force, &self.torque)
    }
}

pub fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

pub fn head3(v: &Vector6<f64>) -> Vector3<f64> {
    v.fixed_rows::<3>(0).into()
}

pub fn tail3(v: &Vector6<f64>) -> Vector3<f64> {
    v.fixed_rows::<3>(3).into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot_x(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }
    fn rot_y(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }
    fn rot_z(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    // Rodrigues formula, independent of the quaternion code.
    fn rodrigues(z: &UnitQuaternion) -> Matrix3<f64> {
        let s = z.eps.norm();
        if s < 1e-15 {
            return Matrix3::identity();
        }
        let angle = 2.0 * s.atan2(z.phi);
        let k = z.eps / s;
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + angle.sin() * kx + (1.0 - angle.cos()) * kx * kx
    }

    fn quat_strategy() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
            .prop_map(|(a, b, c, d)| UnitQuaternion::new(a, Vector3::new(b, c, d)))
    }

    fn euler_strategy(margin: f64) -> impl Strategy<Value = EulerAngles> {
        (
            -PI + 1e-6..PI - 1e-6,
            -FRAC_PI_2 + margin..FRAC_PI_2 - margin,
            -PI + 1e-6..PI - 1e-6,
        )
            .prop_map(|(r, p, y)| EulerAngles::new(r, p, y))
    }

    #[test]
    fn skew_basis_and_zero() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let r = skew(&Vector3::x()) * Vector3::y();
        assert_eq!(r, Vector3::z());
    }

    #[test]
    fn identity_and_inverse_products() {
        let z = UnitQuaternion::new(0.3, Vector3::new(0.1, -0.5, 0.7));
        let p = quat_mul(&UnitQuaternion::identity(), &z);
        assert!((p.to_vector() - z.to_vector()).norm() < 1e-15);
        let i = quat_mul(&z, &quat_conj(&z));
        assert!((i.to_vector() - Vector4::new(1.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
        let c = quat_conj(&UnitQuaternion::from_parts_unchecked(0.0, Vector3::x()));
        assert_eq!(c.to_vector(), Vector4::new(0.0, -1.0, 0.0, 0.0));
    }

    #[test]
    fn e_matrix_at_identity() {
        let e = e_matrix(&UnitQuaternion::identity());
        assert_eq!(e.row(0).norm(), 0.0);
        assert_eq!(e.fixed_view::<3, 3>(1, 0).into_owned(), Matrix3::identity());
    }

    #[test]
    fn derivative_direct_substitution() {
        let z = UnitQuaternion::identity();
        assert_eq!(quat_derivative(&z, &Vector3::zeros()), Vector4::zeros());
        let d = quat_derivative(&z, &Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(d, Vector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn derivative_matches_finite_difference_of_rotation() {
        // Exact propagation for constant inertial omega: z(t) = exp(omega t) (x) z0.
        let z0 = UnitQuaternion::new(0.8, Vector3::new(0.2, -0.3, 0.4));
        let w = Vector3::new(0.7, -1.1, 0.4);
        let h = 1e-5;
        let at = |t: f64| quat_mul(&UnitQuaternion::from_axis_angle(&w, w.norm() * t), &z0);
        let fd = (at(h).to_vector() - at(-h).to_vector()) / (2.0 * h);
        assert!((fd - quat_derivative(&z0, &w)).norm() < 1e-6);
    }

    #[test]
    fn euler_zero_and_near_singular_round_trip() {
        let q = quat_from_euler(&EulerAngles::default());
        assert_eq!(q.to_vector(), Vector4::new(1.0, 0.0, 0.0, 0.0));
        let eta = EulerAngles::new(0.0, FRAC_PI_2 - 1e-3, 0.0);
        let back = euler_from_quat(&quat_from_euler(&eta)).unwrap();
        assert!((back.to_vector() - eta.to_vector()).norm() < 1e-9);
        let sing = quat_from_euler(&EulerAngles::new(0.0, FRAC_PI_2, 0.0));
        assert!(matches!(
            euler_from_quat(&sing),
            Err(Error::RepresentationSingularity { .. })
        ));
    }

    #[test]
    fn quat_error_special_cases() {
        let z = UnitQuaternion::new(0.5, Vector3::new(0.1, 0.2, -0.3));
        let e = quat_error(&z, &z);
        assert!((e.to_vector() - Vector4::new(1.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
        let e = quat_error(&z, &z.negated());
        assert!((e.to_vector() - Vector4::new(-1.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn repr_jacobian_identity_at_zero() {
        assert_eq!(repr_jacobian(&EulerAngles::default()).unwrap(), Matrix6::identity());
        assert!(repr_jacobian(&EulerAngles::new(0.0, FRAC_PI_2, 0.0)).is_err());
    }

    #[test]
    fn euler_rates_reproduce_inertial_omega() {
        // R_dot R^T = S(omega) with R_dot by central differences along eta + t eta_dot.
        let eta = EulerAngles::new(0.4, -0.7, 2.1);
        let rate = Vector3::new(0.3, -0.2, 0.9);
        let h = 1e-6;
        let r = |t: f64| EulerAngles::from_vector(&(eta.to_vector() + t * rate)).rotation();
        let rdot = (r(h) - r(-h)) / (2.0 * h);
        let w = rdot * eta.rotation().transpose();
        let omega = Vector3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
        assert!((omega - euler_rate_matrix(&eta) * rate).norm() < 1e-8);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn skew_matches_cross(a in prop::array::uniform3(-10.0..10.0f64), b in prop::array::uniform3(-10.0..10.0f64)) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let direct = Vector3::new(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x);
            prop_assert!((skew(&a) * b - direct).norm() < 1e-14 * (1.0 + direct.norm()));
            prop_assert!((skew(&a) + skew(&a).transpose()).norm() == 0.0);
        }

        #[test]
        fn product_composes_rotations(z1 in quat_strategy(), z2 in quat_strategy()) {
            let p = quat_mul(&z1, &z2);
            prop_assert!((p.norm() - 1.0).abs() < 1e-9);
            prop_assert!((rodrigues(&p) - rodrigues(&z1) * rodrigues(&z2)).norm() < 1e-12);
            prop_assert!((p.rotation() - rodrigues(&p)).norm() < 1e-12);
        }

        #[test]
        fn conjugate_is_transpose(z in quat_strategy()) {
            prop_assert!((rodrigues(&quat_conj(&z)) - rodrigues(&z).transpose()).norm() < 1e-12);
        }

        #[test]
        fn e_matrix_orthonormal_and_inverse(z in quat_strategy(), w in prop::array::uniform3(-5.0..5.0f64)) {
            let e = e_matrix(&z);
            prop_assert!((e.transpose() * e - Matrix3::identity()).norm() < 1e-12);
            let w = Vector3::from(w);
            let back = omega_from_derivative(&z, &quat_derivative(&z, &w));
            prop_assert!((back - w).norm() < 1e-12);
        }

        #[test]
        fn euler_rotation_matches_axis_product(eta in euler_strategy(1e-3)) {
            let oracle = rot_z(eta.yaw) * rot_y(eta.pitch) * rot_x(eta.roll);
            prop_assert!((rodrigues(&quat_from_euler(&eta)) - oracle).norm() < 1e-12);
            prop_assert!((eta.rotation() - oracle).norm() < 1e-12);
            let back = euler_from_quat(&quat_from_euler(&eta)).unwrap();
            prop_assert!((back.to_vector() - eta.to_vector()).norm() < 1e-9);
        }

        #[test]
        fn error_matches_product_form(zd in quat_strategy(), zo in quat_strategy()) {
            let oracle = quat_mul(&zd, &quat_conj(&zo));
            prop_assert!((quat_error(&zd, &zo).to_vector() - oracle.to_vector()).norm() < 1e-14);
        }

        #[test]
        fn repr_jacobian_inverse_pair(eta in euler_strategy(5.0f64.to_radians())) {
            let j = repr_jacobian(&eta).unwrap();
            prop_assert!((j * repr_jacobian_inv(&eta) - Matrix6::identity()).norm() < 1e-10);
        }

        #[test]
        fn repr_jacobian_norms(eta in euler_strategy(1e-3)) {
            let jinv = repr_jacobian_inv(&eta).svd(false, false).singular_values.max();
            prop_assert!(jinv <= 2f64.sqrt() + 1e-12);
            prop_assert!((jinv - (1.0 + eta.pitch.sin().abs()).sqrt()).abs() < 1e-9);
            let j = repr_jacobian(&eta).unwrap().svd(false, false).singular_values.max();
            let closed = repr_jacobian_norm_bound(eta.pitch);
            prop_assert!((j - closed).abs() < 1e-9 * closed);
        }

        #[test]
        fn norm_chain_keeps_unit(zs in prop::collection::vec(quat_strategy(), 1..30)) {
            let mut acc = UnitQuaternion::identity();
            for z in &zs {
                acc = quat_mul(&acc, z);
                acc = quat_error(&acc, &quat_conj(z));
                acc.renormalize();
                prop_assert!((acc.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
