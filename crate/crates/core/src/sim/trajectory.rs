//! Sinusoidal desired pose trajectories with analytic derivatives.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::spatial::{euler_rate_matrix, quat_from_euler_continuous, skew, stack, EulerAngles, UnitQuaternion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Sin,
    Cos,
}

/// `offset + amplitude * shape(omega t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AxisSinusoid {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub shape: Shape,
}

impl AxisSinusoid {
    pub fn constant(offset: f64) -> Self {
        Self { offset, ..Self::default() }
    }

    /// Value and first two derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (a, w) = (self.amplitude, self.omega);
        let (s, c) = (w * t).sin_cos();
        match self.shape {
            Shape::Sin => (self.offset + a * s, a * w * c, -a * w * w * s),
            Shape::Cos => (self.offset + a * c, -a * w * s, -a * w * w * c),
        }
    }

    /// Largest absolute value reached.
    pub fn max_abs(&self) -> f64 {
        self.offset.abs() + self.amplitude.abs()
    }

    pub fn max_rate(&self) -> f64 {
        (self.amplitude * self.omega).abs()
    }
}

/// Desired pose as six independent sinusoids `[x, y, z, roll, pitch, yaw]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    #[serde(default)]
    pub x: AxisSinusoid,
    #[serde(default)]
    pub y: AxisSinusoid,
    #[serde(default)]
    pub z: AxisSinusoid,
    #[serde(default)]
    pub roll: AxisSinusoid,
    #[serde(default)]
    pub pitch: AxisSinusoid,
    #[serde(default)]
    pub yaw: AxisSinusoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub p: Vector3<f64>,
    pub p_dot: Vector3<f64>,
    pub p_ddot: Vector3<f64>,
    pub eta: EulerAngles,
    pub eta_dot: Vector3<f64>,
    pub eta_ddot: Vector3<f64>,
    pub z: UnitQuaternion,
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

impl TrajectorySample {
    pub fn x_d(&self) -> Vector6<f64> {
        stack(&self.p, &self.eta.to_vector())
    }

    pub fn x_dot(&self) -> Vector6<f64> {
        stack(&self.p_dot, &self.eta_dot)
    }

    pub fn v_d(&self) -> Vector6<f64> {
        stack(&self.p_dot, &self.omega)
    }

    pub fn vdot_d(&self) -> Vector6<f64> {
        stack(&self.p_ddot, &self.omega_dot)
    }
}

/// Time derivative of the Euler-rate matrix `T(eta)`.
pub fn euler_rate_matrix_dot(eta: &EulerAngles, eta_dot: &Vector3<f64>) -> Matrix3<f64> {
    let (st, ct) = eta.pitch.sin_cos();
    let rz = EulerAngles::new(0.0, 0.0, eta.yaw).rotation();
    let b = Matrix3::new(ct, 0.0, 0.0, 0.0, 1.0, 0.0, -st, 0.0, 1.0);
    let b_dot = eta_dot.y * Matrix3::new(-st, 0.0, 0.0, 0.0, 0.0, 0.0, -ct, 0.0, 0.0);
    eta_dot.z * skew(&Vector3::z()) * rz * b + rz * b_dot
}

impl TrajectoryConfig {
    pub fn axes(&self) -> [&AxisSinusoid; 6] {
        [&self.x, &self.y, &self.z, &self.roll, &self.pitch, &self.yaw]
    }

    /// Bound on the desired pitch magnitude.
    pub fn pitch_bound(&self) -> f64 {
        self.pitch.max_abs()
    }

    /// Bound on `||x_d_dot||`.
    pub fn rate_bound(&self) -> f64 {
        self.axes().iter().map(|a| a.max_rate().powi(2)).sum::<f64>().sqrt()
    }

    /// Bound on `||x_d||`.
    pub fn pose_bound(&self) -> f64 {
        self.axes().iter().map(|a| a.max_abs().powi(2)).sum::<f64>().sqrt()
    }

    pub fn sample(&self, t: f64) -> TrajectorySample {
        let v: Vec<(f64, f64, f64)> = self.axes().iter().map(|a| a.eval(t)).collect();
        let pick = |r: std::ops::Range<usize>, k: usize| {
            let s = &v[r];
            let f = |x: &(f64, f64, f64)| match k {
                0 => x.0,
                1 => x.1,
                _ => x.2,
            };
            Vector3::new(f(&s[0]), f(&s[1]), f(&s[2]))
        };
        let eta = EulerAngles::from_vector(&pick(3..6, 0));
        let eta_dot = pick(3..6, 1);
        let eta_ddot = pick(3..6, 2);
        let t_mat = euler_rate_matrix(&eta);
        let omega = t_mat * eta_dot;
        let omega_dot = t_mat * eta_ddot + euler_rate_matrix_dot(&eta, &eta_dot) * eta_dot;
        TrajectorySample {
            p: pick(0..3, 0),
            p_dot: pick(0..3, 1),
            p_ddot: pick(0..3, 2),
            z: quat_from_euler_continuous(&eta),
            eta,
            eta_dot,
            eta_ddot,
            omega,
            omega_dot,
        }
    }
}
