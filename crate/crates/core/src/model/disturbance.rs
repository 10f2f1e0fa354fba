//! State-scaled sinusoidal disturbances in regressor form `d = delta(state, t) dbar`.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    None,
    StateScaledSinusoid,
}

/// Frequency and phase of one sinusoid, each drawn in (0, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub freq: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        (self.freq * t + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    /// Per-agent gains `dbar_i`, one entry per joint.
    pub agent_gain: Vec<DVector<f64>>,
    /// Object gain `dbar_O`.
    pub object_gain: Vector6<f64>,
    pub agent_wave: Vec<Sinusoid>,
    pub object_wave: Sinusoid,
}

fn draw_open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.gen();
        if x > 0.0 {
            return x;
        }
    }
}

impl DisturbanceModel {
    /// Draws all frequencies and phases once from `seed`.
    pub fn new(kind: DisturbanceKind, agent_gain: Vec<DVector<f64>>, object_gain: Vector6<f64>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wave = |rng: &mut ChaCha8Rng| Sinusoid {
            freq: draw_open_unit(rng),
            phase: draw_open_unit(rng),
        };
        let agent_wave = agent_gain.iter().map(|_| wave(&mut rng)).collect();
        let object_wave = wave(&mut rng);
        Self {
            kind,
            agent_gain,
            object_gain,
            agent_wave,
            object_wave,
        }
    }

    pub fn none(n_agents: usize, joints: &[usize]) -> Self {
        Self::new(
            DisturbanceKind::None,
            (0..n_agents).map(|i| DVector::zeros(joints[i])).collect(),
            Vector6::zeros(),
            0,
        )
    }

    /// `delta_i = diag(||q|| sin(w t + phi) + qd)` in joint coordinates.
    pub fn agent_regressor(&self, i: usize, q: &DVector<f64>, qd: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let n = q.len();
        match self.kind {
            DisturbanceKind::None => DMatrix::zeros(n, n),
            DisturbanceKind::StateScaledSinusoid => {
                let s = q.norm() * self.agent_wave[i].eval(t);
                DMatrix::from_diagonal(&qd.map(|v| s + v))
            }
        }
    }

    pub fn agent(&self, i: usize, q: &DVector<f64>, qd: &DVector<f64>, t: f64) -> DVector<f64> {
        self.agent_regressor(i, q, qd, t) * &self.agent_gain[i]
    }

    /// `delta_O = diag(||pose rate|| sin(w t + phi) + v_O)`.
    pub fn object_regressor(&self, pose_rate_norm: f64, v: &Vector6<f64>, t: f64) -> Matrix6<f64> {
        match self.kind {
            DisturbanceKind::None => Matrix6::zeros(),
            DisturbanceKind::StateScaledSinusoid => {
                let s = pose_rate_norm * self.object_wave.eval(t);
                Matrix6::from_diagonal(&v.map(|x| s + x))
            }
        }
    }

    pub fn object(&self, pose_rate_norm: f64, v: &Vector6<f64>, t: f64) -> Vector6<f64> {
        self.object_regressor(pose_rate_norm, v, t) * self.object_gain
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_is_zero() {
        let d = DisturbanceModel::none(2, &[3, 3]);
        let q = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(d.agent(0, &q, &q, 1.0), DVector::zeros(3));
        assert_eq!(d.object(2.0, &Vector6::repeat(1.0), 1.0), Vector6::zeros());
    }

    #[test]
    fn zero_gain_is_zero() {
        let d = DisturbanceModel::new(DisturbanceKind::StateScaledSinusoid, vec![DVector::zeros(3)], Vector6::zeros(), 7);
        let q = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(d.agent(0, &q, &q, 0.3), DVector::zeros(3));
    }

    #[test]
    fn same_seed_same_sequence() {
        let make = || DisturbanceModel::new(DisturbanceKind::StateScaledSinusoid, vec![DVector::repeat(6, 0.5); 4], Vector6::repeat(0.2), 42);
        let (a, b) = (make(), make());
        assert_eq!(a, b);
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        for k in 0..100 {
            let t = k as f64 * 0.01;
            assert_eq!(a.agent(2, &q, &q, t).as_slice(), b.agent(2, &q, &q, t).as_slice());
        }
        for w in a.agent_wave.iter().chain(std::iter::once(&a.object_wave)) {
            assert!(w.freq > 0.0 && w.freq < 1.0 && w.phase > 0.0 && w.phase < 1.0);
        }
        let c = DisturbanceModel::new(DisturbanceKind::StateScaledSinusoid, vec![DVector::repeat(6, 0.5); 4], Vector6::repeat(0.2), 43);
        assert_ne!(a.agent_wave, c.agent_wave);
    }

    #[test]
    fn regressor_form_is_exact() {
        let gain = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let d = DisturbanceModel::new(DisturbanceKind::StateScaledSinusoid, vec![gain.clone()], Vector6::zeros(), 3);
        let q = DVector::from_vec(vec![0.5, -0.1, 0.7]);
        let qd = DVector::from_vec(vec![0.2, 0.4, -0.6]);
        let t = 1.7;
        let s = q.norm() * (d.agent_wave[0].freq * t + d.agent_wave[0].phase).sin();
        let direct = DVector::from_fn(3, |k, _| (s + qd[k]) * gain[k]);
        assert!((d.agent(0, &q, &qd, t) - direct).norm() < 1e-15);
    }
}
