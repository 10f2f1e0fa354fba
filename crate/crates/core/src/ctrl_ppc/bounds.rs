//! Closed-loop bound chain for the prescribed-performance controller and a gain tuner.
//!
//! The chain nests exponentials (`r = 1 + cosh(eps)`), so every bound is carried as
//! its natural logarithm. A bound is infeasible when even its logarithm overflows.

use std::f64::consts::{LN_2, SQRT_2};
use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::PpcFunnels;

/// Natural logarithm of a nonnegative bound.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogBound(pub f64);

impl LogBound {
    pub fn of(x: f64) -> Self {
        LogBound(x.ln())
    }

    /// The bound itself; `inf` when it exceeds the `f64` range.
    pub fn value(self) -> f64 {
        self.0.exp()
    }

    /// Whether `x` respects the bound.
    pub fn admits(self, x: f64) -> bool {
        x <= 0.0 || x.ln() <= self.0
    }
}

/// Bounds on the coupled dynamics over the funnel region.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBounds {
    /// Smallest eigenvalue of `M~`.
    pub m_lower: f64,
    /// Largest eigenvalue of `M~`.
    pub m_upper: f64,
    /// Largest `||C~||`.
    pub c_upper: f64,
    /// Largest `||g~||`.
    pub g_upper: f64,
    /// Largest `||d~||`.
    pub d_upper: f64,
    /// Largest `||J_O(eta)||`.
    pub jo_upper: f64,
    /// Per agent, largest `||J_Mi||`.
    pub jm_norm: Vec<f64>,
    /// Per agent, grasp offset length.
    pub offset_norm: Vec<f64>,
    /// Per agent, largest `||J_i^T||` (task wrench to joint torque).
    pub jt_norm: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryBounds {
    /// Bound on `||x_d||`.
    pub pose: f64,
    /// Bound on `||x_d_dot||`.
    pub rate: f64,
}

pub struct BoundInputs<'a> {
    pub model: &'a ModelBounds,
    pub trajectory: TrajectoryBounds,
    pub funnels: &'a PpcFunnels,
    /// `||eps_s(0)||`.
    pub eps_s0: f64,
    /// `||eps_v(0)||`.
    pub eps_v0: f64,
    pub g_s: f64,
    pub g_v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub b_s: LogBound,
    pub eps_s: LogBound,
    pub xi_s: f64,
    pub r_s: LogBound,
    pub v_r: LogBound,
    pub v_o: LogBound,
    pub v_agents: Vec<LogBound>,
    pub f_s: LogBound,
    pub vdot_r: LogBound,
    pub b_v: LogBound,
    pub eps_v: LogBound,
    pub xi_v: f64,
    pub r_v: LogBound,
    pub u_agents: Vec<LogBound>,
}

fn lse(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `ln(1 + cosh x)` without overflow.
fn ln_slope_bound(x: f64) -> f64 {
    x + 2.0 * (-x).exp().ln_1p() - LN_2
}

fn finite(stage: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InfeasibleBounds { stage: stage.to_string() })
    }
}

/// Evaluates the chain `B_s -> eps_s -> xi_s -> v_r -> v_O -> v_i -> vdot_r -> B_v -> eps_v -> u_i`.
pub fn bound_chain(inp: &BoundInputs) -> Result<BoundReport> {
    let m = inp.model;
    let ln = f64::ln;
    for (name, v) in [
        ("m_lower", m.m_lower),
        ("m_upper", m.m_upper),
        ("jo_upper", m.jo_upper),
        ("g_s", inp.g_s),
        ("g_v", inp.g_v),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InfeasibleBounds { stage: format!("input {name}") });
        }
    }
    for (name, v) in [
        ("c_upper", m.c_upper),
        ("g_upper", m.g_upper),
        ("d_upper", m.d_upper),
        ("trajectory rate", inp.trajectory.rate),
        ("eps_s0", inp.eps_s0),
        ("eps_v0", inp.eps_v0),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InfeasibleBounds { stage: format!("input {name}") });
        }
    }
    let ln_sqrt6 = 0.5 * ln(6.0);
    let ln_sqrt2 = 0.5 * LN_2;
    let (pose, vel) = (&inp.funnels.pose, &inp.funnels.velocity);
    let rho_s0 = ln(pose.max_rho_0());
    let rho_s_min = ln(pose.min_rho_inf());
    let rho_s_rate = ln(pose.max_rate());
    let rho_v0 = ln(vel.max_rho_0());
    let rho_v_min = ln(vel.min_rho_inf());
    let rho_v_rate = ln(vel.max_rate());
    let jo = ln(m.jo_upper);
    let xd_rate = ln(inp.trajectory.rate);
    let g_s = ln(inp.g_s);
    let g_v = ln(inp.g_v);

    let b_s = finite("B_s", lse(&[ln_sqrt6 + jo + rho_v0, xd_rate, ln_sqrt6 + rho_s_rate]))?;
    let eps_s = finite("eps_s", ln(inp.eps_s0).max(rho_s0 + b_s - LN_2 - g_s))?;
    let eps_s_val = finite("eps_s", eps_s.exp())?;
    let xi_s = (0.5 * eps_s_val).tanh();
    let r_s = finite("r_s", ln_slope_bound(eps_s_val))?;
    let v_r = finite("v_r", g_s + ln_sqrt2 + r_s + eps_s - rho_s_min)?;
    let v_o = finite("v_O", lse(&[v_r, ln_sqrt6 + rho_v0]))?;
    let v_agents = m
        .offset_norm
        .iter()
        .map(|p| finite("v_i", ln(p + 1.0) + v_o).map(LogBound))
        .collect::<Result<Vec<_>>>()?;
    let f_s = finite(
        "f_s",
        -rho_s_min + lse(&[ln_sqrt6 + jo + rho_v0, ln_sqrt6 + rho_s_rate, g_s - rho_s_min + r_s + eps_s, xd_rate]),
    )?;
    let ln_one_plus_xe = (xi_s * eps_s_val).ln_1p();
    let vdot_r = finite(
        "vdot_r",
        lse(&[
            g_s + ln_sqrt2 - rho_s_min + 2.0 * r_s + ln_one_plus_xe + f_s,
            g_s + ln_sqrt2 - 2.0 * rho_s_min + rho_s_rate + r_s + eps_s,
            g_s + ln(SQRT_2 + 1.0) + jo + v_o - rho_s_min + r_s + eps_s,
        ]),
    )?;
    let plant = -ln(m.m_lower) + lse(&[ln(m.g_upper), ln(m.d_upper), ln(m.c_upper) + v_o]);
    let b_v = finite("B_v", lse(&[ln_sqrt6 + rho_v_rate, vdot_r, plant]))?;
    let eps_v = finite("eps_v", ln(inp.eps_v0).max(rho_v0 + b_v + ln(m.m_upper) - LN_2 - g_v))?;
    let eps_v_val = finite("eps_v", eps_v.exp())?;
    let xi_v = (0.5 * eps_v_val).tanh();
    let r_v = finite("r_v", ln_slope_bound(eps_v_val))?;
    let u_agents = m
        .jm_norm
        .iter()
        .map(|j| finite("u_i", g_v + ln(*j) - rho_v_min + r_v + eps_v).map(LogBound))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        b_s: LogBound(b_s),
        eps_s: LogBound(eps_s),
        xi_s,
        r_s: LogBound(r_s),
        v_r: LogBound(v_r),
        v_o: LogBound(v_o),
        v_agents,
        f_s: LogBound(f_s),
        vdot_r: LogBound(vdot_r),
        b_v: LogBound(b_v),
        eps_v: LogBound(eps_v),
        xi_v,
        r_v: LogBound(r_v),
        u_agents,
    })
}

impl BoundReport {
    /// `key = value` lines; every bound is given with its natural log.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, b: LogBound| {
            let _ = writeln!(s, "{k} = {:e}\nln_{k} = {:.17e}", b.value(), b.0);
        };
        put("b_s", self.b_s);
        put("eps_s_bar", self.eps_s);
        put("r_s_bar", self.r_s);
        put("v_r_bar", self.v_r);
        put("v_o_bar", self.v_o);
        for (i, b) in self.v_agents.iter().enumerate() {
            put(&format!("v_bar_{i}"), *b);
        }
        put("f_s_bar", self.f_s);
        put("vdot_r_bar", self.vdot_r);
        put("b_v", self.b_v);
        put("eps_v_bar", self.eps_v);
        put("r_v_bar", self.r_v);
        for (i, b) in self.u_agents.iter().enumerate() {
            put(&format!("u_bar_{i}"), *b);
        }
        let _ = writeln!(s, "xi_s_bar = {:.17e}\nxi_v_bar = {:.17e}", self.xi_s, self.xi_v);
        s
    }
}

/// Per-agent wrench limits `min_k tau_k / ||J_i^T||`.
pub fn wrench_limits(torque_limits: &[Vec<f64>], jt_norm: &[f64]) -> Vec<f64> {
    torque_limits
        .iter()
        .zip(jt_norm)
        .map(|(tau, j)| tau.iter().copied().fold(f64::INFINITY, f64::min) / j)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunedGains {
    pub g_s: f64,
    pub g_v: f64,
    /// Whether the defaults had to be changed.
    pub adjusted: bool,
    pub report: Option<BoundReport>,
}

/// Largest `ln(u_bar_i / limit_i)`, with the agent attaining it.
fn excess(report: &BoundReport, limits: &[f64]) -> (f64, usize) {
    report
        .u_agents
        .iter()
        .zip(limits)
        .enumerate()
        .map(|(i, (u, w))| (u.0 - w.ln(), i))
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
}

/// Finds `(g_s, g_v)` with `u_bar_i <= limit_i`, as close as possible (in log scale) to the defaults.
///
/// A log grid around the defaults locates feasible pairs; bisection along the line
/// back toward the defaults then refines the nearest one.
pub fn tune_gains(defaults: (f64, f64), limits: &[f64], eval: impl Fn(f64, f64) -> Result<BoundReport>) -> Result<TunedGains> {
    if limits.iter().all(|w| w.is_infinite()) {
        return Ok(TunedGains {
            g_s: defaults.0,
            g_v: defaults.1,
            adjusted: false,
            report: eval(defaults.0, defaults.1).ok(),
        });
    }
    let check = |g_s: f64, g_v: f64| -> (Option<BoundReport>, f64, usize) {
        match eval(g_s, g_v) {
            Ok(r) => {
                let (x, i) = excess(&r, limits);
                (Some(r), x, i)
            }
            Err(_) => (None, f64::INFINITY, 0),
        }
    };
    let (rep, x, _) = check(defaults.0, defaults.1);
    if x <= 0.0 {
        return Ok(TunedGains { g_s: defaults.0, g_v: defaults.1, adjusted: false, report: rep });
    }
    let (ls0, lv0) = (defaults.0.ln(), defaults.1.ln());
    let steps: Vec<f64> = (-24..=24).map(|k| k as f64 * 0.25 * std::f64::consts::LN_10).collect();
    let mut best: Option<(f64, f64, f64)> = None;
    let mut least = (f64::INFINITY, 0usize, defaults.0, defaults.1);
    for &ds in &steps[8..] {
        for &dv in &steps {
            let (g_s, g_v) = ((ls0 + ds).exp(), (lv0 + dv).exp());
            let (_, x, i) = check(g_s, g_v);
            if x < least.0 {
                least = (x, i, g_s, g_v);
            }
            if x <= 0.0 {
                let d = ds * ds + dv * dv;
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, ds, dv));
                }
            }
        }
    }
    let Some((_, ds, dv)) = best else {
        let binding = if least.0.is_infinite() {
            "the bound chain is infeasible for every candidate gain pair".to_string()
        } else {
            format!(
                "agent {} wrench bound exceeds its limit {:e} by a factor e^{:.3e} at the best candidate g_s = {:e}, g_v = {:e}",
                least.1,
                limits[least.1],
                least.0,
                least.2,
                least.3
            )
        };
        return Err(Error::NoFeasibleGains { binding });
    };
    // Bisection on the segment from the feasible point (s = 0) to the defaults (s = 1).
    let at = |s: f64| ((ls0 + (1.0 - s) * ds).exp(), (lv0 + (1.0 - s) * dv).exp());
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (g_s, g_v) = at(mid);
        if check(g_s, g_v).1 <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (g_s, g_v) = at(lo);
    Ok(TunedGains { g_s, g_v, adjusted: true, report: check(g_s, g_v).0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctrl_ppc::funnel::{FunnelSet, PerformanceFunction};

    fn funnels(rho_s0: f64, rho_v0: f64) -> PpcFunnels {
        let mut pose = FunnelSet { axes: [None; 6] };
        let mut velocity = FunnelSet { axes: [None; 6] };
        for k in 0..6 {
            pose.axes[k] = Some(PerformanceFunction::new(rho_s0, 0.5 * rho_s0, 0.2).unwrap());
            velocity.axes[k] = Some(PerformanceFunction::new(rho_v0, 0.5 * rho_v0, 0.3).unwrap());
        }
        PpcFunnels { pose, velocity }
    }

    fn model() -> ModelBounds {
        ModelBounds {
            m_lower: 0.8,
            m_upper: 2.0,
            c_upper: 0.3,
            g_upper: 5.0,
            d_upper: 0.2,
            jo_upper: 1.2,
            jm_norm: vec![0.6, 0.7],
            offset_norm: vec![0.1, 0.2],
            jt_norm: vec![0.5, 0.5],
        }
    }

    /// The same chain written directly in floating point.
    fn direct(inp: &BoundInputs) -> (f64, f64, Vec<f64>, f64, Vec<f64>) {
        let m = inp.model;
        let s6 = 6f64.sqrt();
        let (p, v) = (&inp.funnels.pose, &inp.funnels.velocity);
        let (rs0, rsm, rsd) = (p.max_rho_0(), p.min_rho_inf(), p.max_rate());
        let (rv0, rvm, rvd) = (v.max_rho_0(), v.min_rho_inf(), v.max_rate());
        let b_s = s6 * m.jo_upper * rv0 + inp.trajectory.rate + s6 * rsd;
        let eps_s = inp.eps_s0.max(rs0 * b_s / (2.0 * inp.g_s));
        let xi_s = (eps_s / 2.0).tanh();
        let r_s = 2.0 / (1.0 - xi_s * xi_s);
        let v_r = inp.g_s * SQRT_2 * r_s * eps_s / rsm;
        let v_o = v_r + s6 * rv0;
        let v_i = m.offset_norm.iter().map(|p| (p + 1.0) * v_o).collect();
        let f_s = (s6 * m.jo_upper * rv0 + s6 * rsd + inp.g_s / rsm * r_s * eps_s + inp.trajectory.rate) / rsm;
        let vdot_r = inp.g_s * SQRT_2 * (r_s * r_s * (1.0 + xi_s * eps_s) * f_s / rsm + rsd * r_s * eps_s / (rsm * rsm))
            + inp.g_s * (SQRT_2 + 1.0) * m.jo_upper * v_o * r_s * eps_s / rsm;
        let b_v = s6 * rvd + vdot_r + (m.g_upper + m.d_upper + m.c_upper * v_o) / m.m_lower;
        let eps_v = inp.eps_v0.max(rv0 * b_v * m.m_upper / (2.0 * inp.g_v));
        let xi_v = (eps_v / 2.0).tanh();
        let r_v = 2.0 / (1.0 - xi_v * xi_v);
        let u = m.jm_norm.iter().map(|j| inp.g_v * j / rvm * r_v * eps_v).collect();
        (eps_s, v_o, v_i, eps_v, u)
    }

    fn inputs<'a>(m: &'a ModelBounds, f: &'a PpcFunnels, g_s: f64, g_v: f64) -> BoundInputs<'a> {
        BoundInputs {
            model: m,
            trajectory: TrajectoryBounds { pose: 1.0, rate: 0.05 },
            funnels: f,
            eps_s0: 0.3,
            eps_v0: 0.2,
            g_s,
            g_v,
        }
    }

    fn close(a: LogBound, b: f64) -> bool {
        (a.value() - b).abs() <= 1e-9 * b.abs()
    }

    #[test]
    fn matches_direct_evaluation() {
        let m = model();
        // Small widths and large gains keep every intermediate value moderate.
        // Large g_v keeps every intermediate value inside the f64 range.
        let f = funnels(0.5, 0.5);
        let inp = inputs(&m, &f, 50.0, 1e6);
        let rep = bound_chain(&inp).unwrap();
        assert!(rep.u_agents[0].value().is_finite());
        let (eps_s, v_o, v_i, eps_v, u) = direct(&inp);
        assert!(close(rep.eps_s, eps_s));
        assert!(close(rep.v_o, v_o));
        assert!(close(rep.v_agents[1], v_i[1]));
        assert!(close(rep.eps_v, eps_v), "{} vs {eps_v}", rep.eps_v.value());
        assert!(close(rep.u_agents[0], u[0]));
        // eps_s_bar = max(||eps_s(0)||, rho_s0_max B_s / (2 g_s)).
        assert!(close(rep.eps_s, (0.5 * rep.b_s.value() / 100.0).max(0.3)));
        // v_i_bar = (||p_i|| + 1) v_O_bar.
        assert!(close(rep.v_agents[0], 1.1 * rep.v_o.value()));
    }

    #[test]
    fn larger_g_v_shrinks_velocity_branch() {
        let m = model();
        let f = funnels(0.5, 0.5);
        let a = bound_chain(&inputs(&m, &f, 50.0, 1e5)).unwrap();
        let b = bound_chain(&inputs(&m, &f, 50.0, 2e5)).unwrap();
        assert!(b.eps_v.0 < a.eps_v.0);
        assert!((a.eps_v.0 - b.eps_v.0 - LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_domain_survives_overflow_and_reports_infeasible() {
        let m = model();
        let f = funnels(0.5, 5.0);
        // r_v_bar overflows f64 but its logarithm does not.
        let rep = bound_chain(&inputs(&m, &f, 0.05, 10.0)).unwrap_or_else(|e| panic!("{e}"));
        assert!(rep.r_v.value().is_infinite() && rep.r_v.0.is_finite());
        assert!(rep.u_agents[0].admits(f64::MAX));
        // With a much smaller g_s even the logarithm of eps_v_bar overflows.
        let err = bound_chain(&inputs(&m, &f, 0.001, 10.0)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBounds { .. }), "{err}");
    }

    #[test]
    fn tuner_behaviour() {
        let m = model();
        let f = funnels(0.5, 0.5);
        let eval = |g_s: f64, g_v: f64| bound_chain(&inputs(&m, &f, g_s, g_v));
        let t = tune_gains((50.0, 1e6), &[f64::INFINITY, f64::INFINITY], eval).unwrap();
        assert_eq!((t.g_s, t.g_v, t.adjusted), (50.0, 1e6, false));

        let base = eval(50.0, 1e6).unwrap();
        let loose: Vec<f64> = base.u_agents.iter().map(|u| 2.0 * u.value()).collect();
        let t = tune_gains((50.0, 1e6), &loose, eval).unwrap();
        assert!(!t.adjusted);

        // Limits below the defaults' bound force a change or a reported failure.
        let tight: Vec<f64> = base.u_agents.iter().map(|u| 0.1 * u.value()).collect();
        match tune_gains((50.0, 1e6), &tight, eval) {
            Ok(t) => {
                assert!(t.adjusted);
                let r = eval(t.g_s, t.g_v).unwrap();
                for (u, w) in r.u_agents.iter().zip(&tight) {
                    assert!(u.admits(*w * (1.0 - 1e-12)) || u.value() <= *w);
                }
            }
            Err(Error::NoFeasibleGains { binding }) => assert!(!binding.is_empty()),
            Err(e) => panic!("{e}"),
        }
        let hopeless = vec![1e-12, 1e-12];
        assert!(matches!(tune_gains((50.0, 1e6), &hopeless, eval), Err(Error::NoFeasibleGains { .. })));
    }

    #[test]
    fn wrench_limit_mapping() {
        let w = wrench_limits(&[vec![3.0, 1.25, 1.25], vec![150.0; 6]], &[0.5, 1.0]);
        assert_eq!(w, vec![2.5, 150.0]);
    }
}
