use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::CliError;
use crate::analysis::{LayerSolution, SweepResult};

pub const SPECTRUM_HEADER: &str = "angle_theta_rad,m,j,lambda,residual,ndof,smax,converged";
pub const SWEEP_HEADER: &str = "angle_theta_rad,angle_beta_deg,j,lambda,error_estimate,converged,status";

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "nan".to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub angle_theta_rad: f64,
    pub m: i32,
    /// One-based branch index.
    pub j: usize,
    pub lambda: f64,
    pub residual: f64,
    pub ndof: usize,
    pub smax: f64,
    pub converged: bool,
}

pub fn spectrum_rows(sol: &LayerSolution) -> Vec<SpectrumRow> {
    (0..sol.eigenvalues.len())
        .map(|j| SpectrumRow {
            angle_theta_rad: sol.aperture.theta(),
            m: sol.m,
            j: j + 1,
            lambda: sol.eigenvalues[j],
            residual: sol.spectrum.residuals[j],
            ndof: sol.system.ndof(),
            smax: sol.report.s_max,
            converged: sol.report.converged[j],
        })
        .collect()
}

pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut s = String::from(SPECTRUM_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            format_float(r.angle_theta_rad),
            r.m,
            r.j,
            format_float(r.lambda),
            format_float(r.residual),
            r.ndof,
            format_float(r.smax),
            r.converged
        ));
    }
    s
}

fn fields<'a>(what: &str, line: &'a str, n: usize, row: usize) -> Result<Vec<&'a str>, CliError> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != n {
        return Err(CliError::Format { what: what.into(), msg: format!("row {row}: {} fields, expected {n}", f.len()) });
    }
    Ok(f)
}

fn value<T: std::str::FromStr>(what: &str, s: &str, row: usize) -> Result<T, CliError> {
    s.trim().parse().map_err(|_| CliError::Format { what: what.into(), msg: format!("row {row}: cannot parse {s:?}") })
}

fn check_header(what: &str, text: &str, header: &str) -> Result<(), CliError> {
    match text.lines().next() {
        Some(h) if h.trim() == header => Ok(()),
        other => Err(CliError::Format { what: what.into(), msg: format!("header {other:?}, expected {header:?}") }),
    }
}

pub fn read_spectrum_csv(text: &str) -> Result<Vec<SpectrumRow>, CliError> {
    const W: &str = "spectrum csv";
    check_header(W, text, SPECTRUM_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let f = fields(W, line, 8, i)?;
        rows.push(SpectrumRow {
            angle_theta_rad: value(W, f[0], i)?,
            m: value(W, f[1], i)?,
            j: value(W, f[2], i)?,
            lambda: value(W, f[3], i)?,
            residual: value(W, f[4], i)?,
            ndof: value(W, f[5], i)?,
            smax: value(W, f[6], i)?,
            converged: value(W, f[7], i)?,
        });
    }
    Ok(rows)
}

pub fn spectrum_json(sol: &LayerSolution, rows: &[SpectrumRow]) -> Value {
    let ap = &sol.aperture;
    json!({
        "angle": {
            "theta_rad": ap.theta(),
            "theta_deg": ap.theta().to_degrees(),
            "beta_rad": ap.beta(),
            "beta_deg": ap.beta().to_degrees(),
        },
        "m": sol.m,
        "rows": rows,
        "metadata": {
            "s_max": sol.report.s_max,
            "ndof": sol.system.ndof(),
            "triangles": sol.mesh.triangles.len(),
            "truncation_converged": sol.report.truncation_converged,
            "error_estimate": sol.report.error_estimate,
            "smallest_ritz_value": sol.spectrum.smallest(),
            "clusters": sol.spectrum.clusters,
            "levels": sol.report.levels,
            "refined": sol.report.refined,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub angle_theta_rad: f64,
    pub angle_beta_deg: f64,
    /// One-based branch index; `None` on a failed angle.
    pub j: Option<usize>,
    pub lambda: f64,
    pub error_estimate: f64,
    pub converged: bool,
    pub ok: bool,
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for o in &result.outcomes {
        if !o.succeeded() {
            rows.push(SweepRow {
                angle_theta_rad: o.theta,
                angle_beta_deg: o.beta.to_degrees(),
                j: None,
                lambda: f64::NAN,
                error_estimate: f64::NAN,
                converged: false,
                ok: false,
            });
            continue;
        }
        for (j, &l) in o.eigenvalues.iter().enumerate() {
            rows.push(SweepRow {
                angle_theta_rad: o.theta,
                angle_beta_deg: o.beta.to_degrees(),
                j: Some(j + 1),
                lambda: l,
                error_estimate: o.error_estimate[j],
                converged: o.converged[j],
                ok: true,
            });
        }
    }
    rows
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_float(r.angle_theta_rad),
            format_float(r.angle_beta_deg),
            r.j.map_or(String::new(), |j| j.to_string()),
            format_float(r.lambda),
            format_float(r.error_estimate),
            r.converged,
            if r.ok { "ok" } else { "failed" }
        ));
    }
    s
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRow>, CliError> {
    const W: &str = "sweep csv";
    check_header(W, text, SWEEP_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let f = fields(W, line, 7, i)?;
        let ok = match f[6].trim() {
            "ok" => true,
            "failed" => false,
            s => return Err(CliError::Format { what: W.into(), msg: format!("row {i}: status {s:?}") }),
        };
        rows.push(SweepRow {
            angle_theta_rad: value(W, f[0], i)?,
            angle_beta_deg: value(W, f[1], i)?,
            j: if f[2].trim().is_empty() { None } else { Some(value(W, f[2], i)?) },
            lambda: value(W, f[3], i)?,
            error_estimate: value(W, f[4], i)?,
            converged: value(W, f[5], i)?,
            ok,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 0.7048559317692773, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn spectrum_round_trip() {
        let rows = vec![
            SpectrumRow { angle_theta_rad: 1.5271630954950384, m: 0, j: 1, lambda: 0.70485593176927733, residual: 3.3e-13, ndof: 12345, smax: 562.79, converged: true },
            SpectrumRow { angle_theta_rad: 1.5271630954950384, m: 0, j: 2, lambda: 0.8322971438273559, residual: 1.5e-13, ndof: 12345, smax: 562.79, converged: false },
        ];
        let text = spectrum_csv(&rows);
        assert!(text.starts_with(SPECTRUM_HEADER));
        assert_eq!(read_spectrum_csv(&text).unwrap(), rows);
        assert!(read_spectrum_csv("bad header\n").is_err());
    }

    #[test]
    fn sweep_round_trip_with_failure() {
        let rows = vec![
            SweepRow { angle_theta_rad: 1.4, angle_beta_deg: 9.78, j: Some(1), lambda: 0.85, error_estimate: 1e-7, converged: true, ok: true },
            SweepRow { angle_theta_rad: 1.5, angle_beta_deg: 4.06, j: None, lambda: f64::NAN, error_estimate: f64::NAN, converged: false, ok: false },
        ];
        let back = read_sweep_csv(&sweep_csv(&rows)).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(!back[1].ok && back[1].j.is_none() && back[1].lambda.is_nan());
    }
}
