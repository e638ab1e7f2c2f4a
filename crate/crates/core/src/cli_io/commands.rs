use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use super::config::RunConfig;
use super::manifest::Manifest;
use super::svg::{mode_svg, profiles_svg, sweep_svg};
use super::table::{
    read_spectrum_csv, read_sweep_csv, spectrum_csv, spectrum_json, spectrum_rows, sweep_csv, sweep_rows,
    SPECTRUM_HEADER, SWEEP_HEADER,
};
use super::{read_file, CliError};
use crate::analysis::{
    count_below, cylinder_count_bound, initial_smax, nodal_extract_field, profile_report_field, solve_layer,
    sweep, threads_from_env, LayerSolution, Truncation,
};
use crate::assembly::assemble_weighted;
use crate::geometry::{build_domain, generate_mesh_with, Aperture};
use crate::oracles::lambda0;

/// Directory and manifest of a finished command.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Outputs {
    pub fn file_names(&self) -> Vec<&str> {
        self.manifest.files.iter().map(|f| f.name.as_str()).collect()
    }
}

fn prepare(cfg: &RunConfig) -> Result<(PathBuf, Manifest), CliError> {
    let dir = cfg.output.clone();
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok((dir, Manifest::new(cfg.command.as_str(), cfg.resolved())))
}

fn finish(dir: PathBuf, manifest: Manifest) -> Result<Outputs, CliError> {
    manifest.write(&dir)?;
    Ok(Outputs { dir, manifest })
}

fn angle_json(ap: &Aperture) -> Value {
    json!({
        "theta_rad": ap.theta(),
        "theta_deg": ap.theta().to_degrees(),
        "beta_rad": ap.beta(),
        "beta_deg": ap.beta().to_degrees(),
    })
}

fn mesh_json(sol: &LayerSolution) -> Value {
    let q = &sol.mesh.quality;
    json!({
        "nodes": sol.mesh.node_count(),
        "triangles": sol.mesh.triangles.len(),
        "ndof": sol.system.ndof(),
        "s_max": sol.report.s_max,
        "min_angle_deg": q.min_angle_deg,
        "max_aspect": q.max_aspect,
    })
}

fn convergence_json(sol: &LayerSolution) -> Value {
    json!({
        "truncation_converged": sol.report.truncation_converged,
        "truncation_shift": sol.report.truncation_shift,
        "refinement_shift": sol.report.refinement_shift,
        "error_estimate": sol.report.error_estimate,
        "converged": sol.report.converged,
    })
}

fn solve_one(cfg: &RunConfig, manifest: &mut Manifest) -> Result<LayerSolution, CliError> {
    let ap = cfg.aperture()?;
    let t = Instant::now();
    let sol = solve_layer(&ap, cfg.m, &cfg.layer_params(), &cfg.policy())?;
    manifest.timings.insert("solve_s".into(), t.elapsed().as_secs_f64());
    manifest.angles.push(angle_json(&ap));
    manifest.mesh = mesh_json(&sol);
    manifest.convergence = convergence_json(&sol);
    Ok(sol)
}

/// Converged spectrum at one angle: `spectrum.csv`, `spectrum.json`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (dir, mut manifest) = prepare(cfg)?;
    let sol = solve_one(cfg, &mut manifest)?;
    let rows = spectrum_rows(&sol);
    manifest.emit(&dir, "spectrum.csv", spectrum_csv(&rows).as_bytes())?;
    let js = serde_json::to_string_pretty(&spectrum_json(&sol, &rows))?;
    manifest.emit(&dir, "spectrum.json", js.as_bytes())?;
    finish(dir, manifest)
}

/// Eigenvalue branches over a list of angles: `sweep.csv`, `sweep.svg`.
/// Fails only when no angle succeeds.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (dir, mut manifest) = prepare(cfg)?;
    let angles = cfg.apertures()?;
    let threads = threads_from_env();
    let t = Instant::now();
    let result = sweep(&angles, cfg.k, &cfg.layer_params(), &cfg.policy(), threads)?;
    manifest.timings.insert("sweep_s".into(), t.elapsed().as_secs_f64());
    manifest.timings.insert("threads".into(), threads as f64);
    for (ap, o) in angles.iter().zip(&result.outcomes) {
        let mut a = angle_json(ap);
        a["ndof"] = json!(o.ndof);
        a["s_max"] = json!(o.s_max);
        a["converged"] = json!(o.converged);
        a["error"] = json!(o.error);
        manifest.angles.push(a);
    }
    manifest.convergence = json!({
        "succeeded": result.outcomes.iter().filter(|o| o.succeeded()).count(),
        "failed": result.outcomes.iter().filter(|o| !o.succeeded()).count(),
        "monotonicity_violations": result.monotonicity_violations(),
        "min_gap": result.min_gap(),
    });
    manifest.emit(&dir, "sweep.csv", sweep_csv(&sweep_rows(&result)).as_bytes())?;
    manifest.emit(&dir, "sweep.svg", sweep_svg(&result, cfg.angle_unit.key() == "beta-deg").as_bytes())?;
    let out = finish(dir, manifest)?;
    if let Some(first) = result.outcomes.iter().find(|o| !o.succeeded()) {
        if result.outcomes.iter().all(|o| !o.succeeded()) {
            return Err(CliError::Format {
                what: "sweep".into(),
                msg: format!("every angle failed, first: {}", first.error.as_deref().unwrap_or("")),
            });
        }
    }
    Ok(out)
}

/// Contour plot of every computed mode plus the overlaid axial profiles.
pub fn cmd_plot_modes(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (dir, mut manifest) = prepare(cfg)?;
    let sol = solve_one(cfg, &mut manifest)?;
    let t = Instant::now();
    let z_max = build_domain(sol.aperture, sol.report.s_max)?.z_extent();
    let mut profiles = Vec::new();
    let mut nodal_counts = Vec::new();
    for (j, x) in sol.spectrum.eigenvectors.iter().enumerate().take(sol.eigenvalues.len()) {
        let values = sol.system.to_nodal(x);
        let nodal = nodal_extract_field(&sol.mesh, &values)?;
        let title = format!(
            "j = {}, λ = {:.8}, β = {:.4}°",
            j + 1,
            sol.eigenvalues[j],
            sol.aperture.beta().to_degrees()
        );
        let svg = mode_svg(&sol.mesh, &values, &nodal, &sol.aperture, cfg.vertical_scale, cfg.contour_levels, &title);
        manifest.emit(&dir, &format!("mode_{}.svg", j + 1), svg.as_bytes())?;
        nodal_counts.push(json!({ "j": j + 1, "nodal_lines": nodal.nodal_lines, "sign_domains": nodal.sign_domains }));
        profiles.push((j + 1, profile_report_field(&sol.mesh, &sol.aperture, &values, z_max, cfg.profile_bins)?));
    }
    manifest.emit(&dir, "profiles.svg", profiles_svg(&profiles).as_bytes())?;
    manifest.timings.insert("plot_s".into(), t.elapsed().as_secs_f64());
    manifest.convergence["nodal"] = json!(nodal_counts);
    finish(dir, manifest)
}

/// Eigenvalues at `theta` from a sweep or spectrum CSV.
fn fem_eigenvalues(path: &Path, theta: f64) -> Result<Vec<f64>, CliError> {
    let text = read_file(path)?;
    let header = text.lines().next().unwrap_or("").trim();
    let close = |t: f64| (t - theta).abs() <= 1e-12 * theta.abs().max(1.0);
    let vals: Vec<f64> = if header == SWEEP_HEADER {
        read_sweep_csv(&text)?.into_iter().filter(|r| r.ok && close(r.angle_theta_rad)).map(|r| r.lambda).collect()
    } else if header == SPECTRUM_HEADER {
        read_spectrum_csv(&text)?.into_iter().filter(|r| close(r.angle_theta_rad)).map(|r| r.lambda).collect()
    } else {
        return Err(CliError::Format { what: "eigenvalue file".into(), msg: format!("unknown header {header:?}") });
    };
    if vals.is_empty() {
        return Err(CliError::Format {
            what: "eigenvalue file".into(),
            msg: format!("no successful rows at theta = {theta}"),
        });
    }
    Ok(vals)
}

/// Cylinder counting bound, optionally compared with computed eigenvalues.
pub fn cmd_bound(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (dir, mut manifest) = prepare(cfg)?;
    let ap = cfg.aperture()?;
    let lambda_bar = cfg.lambda_bar.ok_or_else(|| CliError::usage("bound needs lambda-bar"))?;
    if !(lambda_bar > lambda0() && lambda_bar < 1.0) {
        return Err(CliError::usage(format!("lambda-bar must lie in ({}, 1), got {lambda_bar}", lambda0())));
    }
    let bound = cylinder_count_bound(&ap, lambda_bar)?;
    let mut out = json!({
        "angle": angle_json(&ap),
        "lambda_bar": bound.lambda_bar,
        "radius": bound.radius,
        "length": bound.length,
        "score": bound.score,
        "n": bound.n,
        "top_cylinder_eigenvalue": bound.top_eigenvalue(),
    });
    if let Some(path) = &cfg.sweep_file {
        let vals = fem_eigenvalues(path, ap.theta())?;
        let fem_count = count_below(&vals, lambda_bar);
        out["comparison"] = json!({
            "source": path.display().to_string(),
            "fem_count": fem_count,
            "computed_eigenvalues": vals.len(),
            "fem_count_at_least_n": fem_count >= bound.n,
        });
    }
    manifest.angles.push(angle_json(&ap));
    manifest.emit(&dir, "bound.json", serde_json::to_string_pretty(&out)?.as_bytes())?;
    finish(dir, manifest)
}

/// Mesh and assembled matrices at the starting truncation.
pub fn cmd_mesh_export(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (dir, mut manifest) = prepare(cfg)?;
    let ap = cfg.aperture()?;
    let s_max = match cfg.truncation {
        Truncation::Auto => initial_smax(&ap),
        Truncation::Fixed(s) => s,
    };
    let t = Instant::now();
    let mesh = generate_mesh_with(&build_domain(ap, s_max)?, &cfg.mesh)?;
    let system = assemble_weighted(&mesh, &ap, cfg.m, None)?;
    manifest.timings.insert("assemble_s".into(), t.elapsed().as_secs_f64());
    manifest.angles.push(angle_json(&ap));
    manifest.mesh = json!({
        "nodes": mesh.node_count(),
        "triangles": mesh.triangles.len(),
        "ndof": system.ndof(),
        "s_max": s_max,
        "min_angle_deg": mesh.quality.min_angle_deg,
        "max_aspect": mesh.quality.max_aspect,
    });
    manifest.emit(&dir, "mesh.txt", mesh.to_text().as_bytes())?;
    manifest.emit(&dir, "stiffness.txt", system.a.to_text().as_bytes())?;
    manifest.emit(&dir, "mass.txt", system.b.to_text().as_bytes())?;
    finish(dir, manifest)
}
