//! Telemetry CSV: one header row, LF line endings, 17 significant digits.

use std::io::Write;

use nalgebra::DVector;

use crate::ctrl_ppc::PpcOutput;
use crate::error::{Error, Result};
use crate::model::coupled::ObjectState;
use crate::sim::config::ControllerKind;
use crate::sim::runner::{Command, Detail};
use crate::spatial::euler_from_rotation_unchecked;

const POSE: [&str; 6] = ["x", "y", "z", "roll", "pitch", "yaw"];
const TWIST: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];

/// Column names for a controller and the agents' joint counts.
pub fn header(controller: ControllerKind, joints: &[usize]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(POSE.iter().map(|a| format!("x_{a}")));
    h.extend(["qw", "qx", "qy", "qz"].iter().map(|a| format!("zeta_{a}")));
    h.extend(TWIST.iter().map(|a| format!("v_{a}")));
    match controller {
        ControllerKind::Adaptive => {
            h.extend(["x", "y", "z"].iter().map(|a| format!("e_p_{a}")));
            h.push("e_phi".into());
            h.extend(["x", "y", "z"].iter().map(|a| format!("e_eps_{a}")));
            h.extend(TWIST.iter().map(|a| format!("e_vf_{a}")));
        }
        ControllerKind::Ppc => {
            for (pre, names) in [("s", POSE), ("v", TWIST)] {
                h.extend(names.iter().map(|a| format!("e_{pre}_{a}")));
                h.extend(names.iter().map(|a| format!("rho_{pre}_{a}")));
                h.extend(names.iter().map(|a| format!("xi_{pre}_{a}")));
            }
        }
        ControllerKind::Passive => {}
    }
    for (i, _) in joints.iter().enumerate() {
        h.extend(TWIST.iter().map(|a| format!("u{i}_{}", &a[..])));
    }
    for (i, n) in joints.iter().enumerate() {
        h.extend((0..*n).map(|j| format!("tau{i}_{j}")));
    }
    if controller == ControllerKind::Adaptive {
        h.push("V".into());
        h.push("Vdot".into());
    }
    h
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct TelemetryWriter<'a> {
    out: csv::Writer<&'a mut dyn Write>,
    width: usize,
}

impl<'a> TelemetryWriter<'a> {
    pub fn new(sink: &'a mut dyn Write, controller: ControllerKind, joints: &[usize]) -> Result<Self> {
        let h = header(controller, joints);
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        out.write_record(&h).map_err(io)?;
        Ok(Self { out, width: h.len() })
    }

    pub fn row(
        &mut self,
        t: f64,
        s: &ObjectState,
        cmd: &Command,
        ppc: Option<&PpcOutput>,
        torques: &[DVector<f64>],
        lyap: Option<(f64, f64)>,
    ) -> Result<()> {
        let mut r = Vec::with_capacity(self.width);
        r.push(t);
        r.extend(s.p.iter());
        r.extend(euler_from_rotation_unchecked(&s.z.rotation()).to_vector().iter());
        r.extend(s.z.to_vector().iter());
        r.extend(s.v.iter());
        match (&cmd.detail, ppc) {
            (Detail::Adaptive { errors, e_vf }, _) => {
                r.extend(errors.e_p.iter());
                r.push(errors.e_zeta.phi);
                r.extend(errors.e_zeta.eps.iter());
                r.extend(e_vf.iter());
            }
            (_, Some(p)) => {
                for (e, f) in [(&p.e_s, &p.pose), (&p.e_v, &p.velocity)] {
                    r.extend(e.iter());
                    r.extend(f.rho.iter());
                    r.extend(f.xi.iter());
                }
            }
            _ => {}
        }
        for u in &cmd.u {
            r.extend(u.iter());
        }
        for tau in torques {
            r.extend(tau.iter());
        }
        if let Some((v, vdot)) = lyap {
            r.push(v);
            r.push(vdot);
        }
        if r.len() != self.width {
            return Err(Error::MalformedTelemetry(format!("row has {} fields, header {}", r.len(), self.width)));
        }
        self.out.write_record(r.iter().map(|x| fmt_f64(*x))).map_err(io)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::from)
    }
}

fn io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123_456_789.123_456_78, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.1).split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    }

    #[test]
    fn header_widths() {
        assert_eq!(header(ControllerKind::Passive, &[3, 3]).len(), 1 + 6 + 4 + 6 + 12 + 6);
        assert_eq!(header(ControllerKind::Ppc, &[6]).len(), 1 + 6 + 4 + 6 + 36 + 6 + 6);
        assert_eq!(header(ControllerKind::Adaptive, &[6]).len(), 1 + 6 + 4 + 6 + 13 + 6 + 6 + 2);
    }
}
