use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use super::CliError;
use crate::analysis::{ConvergencePolicy, LayerParams, Truncation};
use crate::eigensolve::EigenSolveParams;
use crate::geometry::{Aperture, MeshParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    PlotModes,
    Bound,
    MeshExport,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::PlotModes => "plot-modes",
            Command::Bound => "bound",
            Command::MeshExport => "mesh-export",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "solve" => Command::Solve,
            "sweep" => Command::Sweep,
            "plot-modes" => Command::PlotModes,
            "bound" => Command::Bound,
            "mesh-export" => Command::MeshExport,
            _ => return Err(CliError::usage(format!("unknown command {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnit {
    ThetaRad,
    ThetaDeg,
    BetaDeg,
}

impl AngleUnit {
    pub fn key(&self) -> &'static str {
        match self {
            AngleUnit::ThetaRad => "theta-rad",
            AngleUnit::ThetaDeg => "theta-deg",
            AngleUnit::BetaDeg => "beta-deg",
        }
    }

    pub fn aperture(&self, v: f64) -> Result<Aperture, CliError> {
        let ap = match self {
            AngleUnit::ThetaRad => Aperture::from_theta(v),
            AngleUnit::ThetaDeg => Aperture::from_theta_deg(v),
            AngleUnit::BetaDeg => Aperture::from_beta_deg(v),
        };
        ap.map_err(|e| CliError::usage(e.to_string()))
    }
}

/// Recognised configuration keys.
pub const KEYS: [&str; 22] = [
    "theta-rad",
    "theta-deg",
    "beta-deg",
    "m",
    "k",
    "h",
    "grading",
    "far-aspect",
    "smax",
    "truncation-tol",
    "refinement-tol",
    "refine",
    "max-dofs",
    "max-refined-dofs",
    "solver-tol",
    "sigma",
    "output",
    "vertical-scale",
    "contour-levels",
    "lambda-bar",
    "sweep-file",
    "profile-bins",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// A single value, a comma list, or an inclusive range `start:stop:step`.
pub fn parse_angle_values(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::usage(format!("cannot parse angle value(s) {text:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| a + i as f64 * step).collect());
    }
    text.split(',').map(num).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub angle_unit: AngleUnit,
    pub angle_values: Vec<f64>,
    pub m: i32,
    pub k: usize,
    pub mesh: MeshParams,
    pub truncation: Truncation,
    pub truncation_tol: f64,
    pub refinement_tol: f64,
    pub refine: bool,
    pub max_dofs: usize,
    pub max_refined_dofs: usize,
    pub solver_tol: f64,
    pub sigma: Option<f64>,
    pub output: PathBuf,
    pub vertical_scale: f64,
    pub contour_levels: usize,
    pub lambda_bar: Option<f64>,
    pub sweep_file: Option<PathBuf>,
    pub profile_bins: usize,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::usage(format!("invalid value {v:?} for {key}")))
}

impl RunConfig {
    /// Builds a configuration from pairs; later pairs override earlier ones.
    pub fn from_pairs(command: Command, pairs: &[(String, String)]) -> Result<Self, CliError> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        let mut angle: Option<(AngleUnit, &str)> = None;
        for (k, v) in pairs {
            let key = KEYS
                .iter()
                .find(|&&x| x == k)
                .ok_or_else(|| CliError::usage(format!("unknown key {k:?}")))?;
            let unit = match *key {
                "theta-rad" => Some(AngleUnit::ThetaRad),
                "theta-deg" => Some(AngleUnit::ThetaDeg),
                "beta-deg" => Some(AngleUnit::BetaDeg),
                _ => None,
            };
            match unit {
                Some(u) => {
                    if let Some((prev, _)) = angle {
                        if prev != u {
                            return Err(CliError::usage(format!(
                                "exactly one angle key is allowed, got {} and {}",
                                prev.key(),
                                u.key()
                            )));
                        }
                    }
                    angle = Some((u, v.as_str()));
                }
                None => {
                    map.insert(key, v.as_str());
                }
            }
        }
        let (angle_unit, angle_text) =
            angle.ok_or_else(|| CliError::usage("an angle is required: theta-rad, theta-deg or beta-deg"))?;
        let angle_values = parse_angle_values(angle_text)?;
        if command != Command::Sweep && angle_values.len() != 1 {
            return Err(CliError::usage(format!("{} takes a single angle", command.as_str())));
        }

        let defaults = LayerParams::default();
        let policy = ConvergencePolicy::default();
        let get = |k: &str| map.get(k).copied();
        let m: i32 = get("m").map(|v| parse("m", v)).transpose()?.unwrap_or(0);
        let k: usize = get("k").map(|v| parse("k", v)).transpose()?.unwrap_or(7);
        if k == 0 {
            return Err(CliError::usage("k must be at least 1"));
        }
        let h = get("h").map(|v| parse("h", v)).transpose()?.unwrap_or(defaults.mesh.h);
        let grading = get("grading").map(|v| parse("grading", v)).transpose()?.unwrap_or(defaults.mesh.grading);
        let far_aspect =
            get("far-aspect").map(|v| parse("far-aspect", v)).transpose()?.unwrap_or(defaults.mesh.far_aspect);
        let truncation = match get("smax") {
            None | Some("auto") => Truncation::Auto,
            Some(v) => Truncation::Fixed(parse("smax", v)?),
        };
        let sigma = match get("sigma") {
            None | Some("auto") => None,
            Some(v) => Some(parse("sigma", v)?),
        };
        let lambda_bar = get("lambda-bar").map(|v| parse("lambda-bar", v)).transpose()?;
        if command == Command::Bound && lambda_bar.is_none() {
            return Err(CliError::usage("bound needs lambda-bar"));
        }
        let cfg = RunConfig {
            command,
            angle_unit,
            angle_values,
            m,
            k,
            mesh: MeshParams::new(h, grading).with_far_aspect(far_aspect),
            truncation,
            truncation_tol: get("truncation-tol").map(|v| parse("truncation-tol", v)).transpose()?.unwrap_or(policy.truncation_tol),
            refinement_tol: get("refinement-tol").map(|v| parse("refinement-tol", v)).transpose()?.unwrap_or(policy.refinement_tol),
            refine: get("refine").map(|v| parse("refine", v)).transpose()?.unwrap_or(policy.refine),
            max_dofs: get("max-dofs").map(|v| parse("max-dofs", v)).transpose()?.unwrap_or(policy.max_dofs),
            max_refined_dofs: get("max-refined-dofs")
                .map(|v| parse("max-refined-dofs", v))
                .transpose()?
                .unwrap_or(policy.max_refined_dofs),
            solver_tol: get("solver-tol").map(|v| parse("solver-tol", v)).transpose()?.unwrap_or(defaults.solver.tol),
            sigma,
            output: PathBuf::from(get("output").unwrap_or(".")),
            vertical_scale: get("vertical-scale").map(|v| parse("vertical-scale", v)).transpose()?.unwrap_or(1.0),
            contour_levels: get("contour-levels").map(|v| parse("contour-levels", v)).transpose()?.unwrap_or(8),
            lambda_bar,
            sweep_file: get("sweep-file").map(PathBuf::from),
            profile_bins: get("profile-bins").map(|v| parse("profile-bins", v)).transpose()?.unwrap_or(400),
        };
        cfg.apertures()?;
        if !(cfg.vertical_scale > 0.0) {
            return Err(CliError::usage("vertical-scale must be positive"));
        }
        Ok(cfg)
    }

    pub fn apertures(&self) -> Result<Vec<Aperture>, CliError> {
        self.angle_values.iter().map(|&v| self.angle_unit.aperture(v)).collect()
    }

    pub fn aperture(&self) -> Result<Aperture, CliError> {
        self.angle_unit.aperture(self.angle_values[0])
    }

    pub fn layer_params(&self) -> LayerParams {
        let mut solver = EigenSolveParams { k: self.k, tol: self.solver_tol, ..Default::default() };
        if let Some(s) = self.sigma {
            solver.sigma = s;
        }
        LayerParams { mesh: self.mesh.clone(), solver }
    }

    pub fn policy(&self) -> ConvergencePolicy {
        ConvergencePolicy {
            truncation: self.truncation,
            truncation_tol: self.truncation_tol,
            refinement_tol: self.refinement_tol,
            refine: self.refine,
            max_dofs: self.max_dofs,
            max_refined_dofs: self.max_refined_dofs,
            ..Default::default()
        }
    }

    /// Every setting with defaults filled in, as the pairs that reproduce it.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let angles: Vec<String> = self.angle_values.iter().map(|v| format!("{v:?}")).collect();
        put(self.angle_unit.key(), angles.join(","));
        put("m", self.m.to_string());
        put("k", self.k.to_string());
        put("h", format!("{:?}", self.mesh.h));
        put("grading", format!("{:?}", self.mesh.grading));
        put("far-aspect", format!("{:?}", self.mesh.far_aspect));
        put(
            "smax",
            match self.truncation {
                Truncation::Auto => "auto".into(),
                Truncation::Fixed(s) => format!("{s:?}"),
            },
        );
        put("truncation-tol", format!("{:?}", self.truncation_tol));
        put("refinement-tol", format!("{:?}", self.refinement_tol));
        put("refine", self.refine.to_string());
        put("max-dofs", self.max_dofs.to_string());
        put("max-refined-dofs", self.max_refined_dofs.to_string());
        put("solver-tol", format!("{:?}", self.solver_tol));
        put("sigma", self.sigma.map_or("auto".into(), |s| format!("{s:?}")));
        put("output", self.output.display().to_string());
        put("vertical-scale", format!("{:?}", self.vertical_scale));
        put("contour-levels", self.contour_levels.to_string());
        if let Some(l) = self.lambda_bar {
            put("lambda-bar", format!("{l:?}"));
        }
        if let Some(p) = &self.sweep_file {
            put("sweep-file", p.display().to_string());
        }
        put("profile-bins", self.profile_bins.to_string());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(p: &[(&str, &str)]) -> Vec<(String, String)> {
        p.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn config_text() {
        let p = parse_config_text("# run\nbeta-deg = 2.5\n k=7 # seven\n\n").unwrap();
        assert_eq!(p, pairs(&[("beta-deg", "2.5"), ("k", "7")]));
        assert!(parse_config_text("beta-deg 2.5").is_err());
    }

    #[test]
    fn angles() {
        assert_eq!(parse_angle_values("1:3:1").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_angle_values("1:15:1").unwrap().len(), 15);
        assert_eq!(parse_angle_values("80, 85").unwrap(), vec![80.0, 85.0]);
        assert!(parse_angle_values("3:1:1").is_err());
        assert!(parse_angle_values("x").is_err());
    }

    #[test]
    fn exactly_one_angle_key() {
        let e = RunConfig::from_pairs(Command::Solve, &pairs(&[("k", "2")])).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_pairs(Command::Solve, &pairs(&[("beta-deg", "2"), ("theta-deg", "88")]));
        assert!(e.is_err());
        let c = RunConfig::from_pairs(Command::Solve, &pairs(&[("beta-deg", "2"), ("beta-deg", "3")])).unwrap();
        assert_eq!(c.angle_values, vec![3.0]);
        assert!(RunConfig::from_pairs(Command::Solve, &pairs(&[("beta-deg", "1,2")])).is_err());
        assert!(RunConfig::from_pairs(Command::Sweep, &pairs(&[("beta-deg", "1,2")])).is_ok());
        assert!(RunConfig::from_pairs(Command::Solve, &pairs(&[("beta-deg", "95")])).is_err());
    }

    #[test]
    fn resolved_round_trip() {
        let c = RunConfig::from_pairs(
            Command::Solve,
            &pairs(&[("theta-deg", "45"), ("m", "1"), ("smax", "60"), ("k", "3"), ("h", "0.4")]),
        )
        .unwrap();
        let again: Vec<(String, String)> = c.resolved().into_iter().collect();
        assert_eq!(RunConfig::from_pairs(Command::Solve, &again).unwrap(), c);
        assert!(RunConfig::from_pairs(Command::Solve, &pairs(&[("theta-deg", "45"), ("bogus", "1")])).is_err());
        assert!(RunConfig::from_pairs(Command::Bound, &pairs(&[("theta-deg", "45")])).is_err());
    }
}
