//! Error statistics and envelope margins from a telemetry CSV.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Fraction of the peak that defines the settling band.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct SignalStats {
    pub name: String,
    pub max_abs: f64,
    pub rms: f64,
    /// First time after which `|e|` stays within 2% of its peak; `None` if it never does.
    pub settling_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub rows: usize,
    pub signals: Vec<SignalStats>,
    /// `(error column, min_t (rho - |e|))` for every error with a matching envelope column.
    pub margins: Vec<(String, f64)>,
}

impl Metrics {
    pub fn signal(&self, name: &str) -> Option<&SignalStats> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn margin(&self, name: &str) -> Option<f64> {
        self.margins.iter().find(|(n, _)| n == name).map(|(_, m)| *m)
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rows = {}", self.rows);
        for g in &self.signals {
            let _ = writeln!(s, "{}.max_abs = {:e}", g.name, g.max_abs);
            let _ = writeln!(s, "{}.rms = {:e}", g.name, g.rms);
            match g.settling_time {
                Some(t) => {
                    let _ = writeln!(s, "{}.settling_time = {t:e}", g.name);
                }
                None => {
                    let _ = writeln!(s, "{}.settling_time = null", g.name);
                }
            }
        }
        for (n, m) in &self.margins {
            let _ = writeln!(s, "{n}.margin = {m:e}");
        }
        s
    }
}

/// Summarizes every `e_*` column of a telemetry CSV.
pub fn metrics(csv_text: &str) -> Result<Metrics> {
    let bad = |m: String| Error::MalformedTelemetry(m);
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(bad("first column must be `t`".into()));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(bad(format!("row {} has {} fields, header has {}", line + 1, rec.len(), header.len())));
        }
        for (k, f) in rec.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| bad(format!("row {} column `{}`: `{f}` is not a number", line + 1, header[k])))?;
            if !v.is_finite() {
                return Err(bad(format!("row {} column `{}` is not finite", line + 1, header[k])));
            }
            cols[k].push(v);
        }
    }
    let rows = cols[0].len();
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    let t = &cols[0];
    if t.windows(2).any(|w| w[1] < w[0]) {
        return Err(bad("time column is not monotone".into()));
    }
    let mut signals = Vec::new();
    let mut margins = Vec::new();
    for (k, name) in header.iter().enumerate() {
        if !name.starts_with("e_") || name == "e_phi" {
            continue;
        }
        let e = &cols[k];
        let max_abs = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rms = (e.iter().map(|x| x * x).sum::<f64>() / rows as f64).sqrt();
        let band = SETTLING_BAND * max_abs;
        let settling_time = match e.iter().rposition(|x| x.abs() > band) {
            None => Some(t[0]),
            Some(i) if i + 1 < rows => Some(t[i + 1]),
            Some(_) => None,
        };
        signals.push(SignalStats { name: name.clone(), max_abs, rms, settling_time });
        let rho_name = format!("rho_{}", &name[2..]);
        if let Some(r) = header.iter().position(|h| *h == rho_name) {
            let m = cols[r].iter().zip(e).map(|(rho, x)| rho - x.abs()).fold(f64::INFINITY, f64::min);
            margins.push((name.clone(), m));
        }
    }
    Ok(Metrics { rows, signals, margins })
}
