use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::assembly::{assemble_weighted, AssembledSystem};
use crate::eigensolve::{solve_lowest, EigenSolveParams, Spectrum};
use crate::geometry::{build_domain, generate_mesh_with, refine_mesh, Aperture, Mesh, MeshParams};

/// How the strip is truncated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Start from [`initial_smax`] and double until the spectrum settles.
    Auto,
    /// One solve at the given `s_max`, no doubling.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePolicy {
    pub truncation: Truncation,
    /// Accept a truncation once doubling moves every eigenvalue by less.
    pub truncation_tol: f64,
    /// Accept the mesh once one refinement moves every eigenvalue by less.
    pub refinement_tol: f64,
    pub refine: bool,
    /// Truncation levels with more dofs are not attempted.
    pub max_dofs: usize,
    /// Budget for the refined level.
    pub max_refined_dofs: usize,
    pub max_doublings: usize,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        ConvergencePolicy {
            truncation: Truncation::Auto,
            truncation_tol: 1e-6,
            refinement_tol: 1e-5,
            refine: true,
            max_dofs: 400_000,
            max_refined_dofs: 1_600_000,
            max_doublings: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub mesh: MeshParams,
    pub solver: EigenSolveParams,
}

impl Default for LayerParams {
    fn default() -> Self {
        LayerParams { mesh: MeshParams::new(0.25, 1e4).with_far_aspect(3.0), solver: EigenSolveParams::default() }
    }
}

impl LayerParams {
    pub fn with_k(k: usize) -> Self {
        LayerParams { solver: EigenSolveParams::with_k(k), ..Default::default() }
    }
}

/// One solve of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub s_max: f64,
    pub ndof: usize,
    pub triangles: usize,
    /// Eigenvalues below the threshold.
    pub eigenvalues: Vec<f64>,
    /// Further converged Ritz values at or above the threshold.
    pub above: Vec<f64>,
    pub count_below_threshold: Option<usize>,
}

impl LevelRecord {
    fn new(s_max: f64, mesh: &Mesh, system: &AssembledSystem, spec: &Spectrum) -> Self {
        LevelRecord {
            s_max,
            ndof: system.ndof(),
            triangles: mesh.triangles.len(),
            eigenvalues: spec.eigenvalues.clone(),
            above: spec.above_threshold.iter().map(|p| p.value).collect(),
            count_below_threshold: spec.meta.count_below_threshold,
        }
    }

    /// All computed Ritz values, ascending.
    pub fn ritz_values(&self) -> Vec<f64> {
        self.eigenvalues.iter().chain(&self.above).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Truncation levels in the order solved; the last one is accepted.
    pub levels: Vec<LevelRecord>,
    pub s_max: f64,
    pub truncation_converged: bool,
    pub refined: Option<LevelRecord>,
    /// `λ_j(2 s_max) - λ_j(s_max)` for the last doubling.
    pub truncation_shift: Vec<f64>,
    /// `λ_j(h/2) - λ_j(h)` at the accepted truncation.
    pub refinement_shift: Vec<f64>,
    pub error_estimate: Vec<f64>,
    pub converged: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LayerSolution {
    pub aperture: Aperture,
    pub m: i32,
    /// Reported eigenvalues: Richardson-extrapolated when refined.
    pub eigenvalues: Vec<f64>,
    /// Finest solve, with eigenvectors on `mesh`/`system`.
    pub spectrum: Spectrum,
    pub mesh: Mesh,
    pub system: AssembledSystem,
    pub report: ConvergenceReport,
}

impl LayerSolution {
    pub fn all_converged(&self) -> bool {
        self.report.converged.iter().all(|&c| c)
    }
}

/// Starting truncation: three times the tip position plus the decay
/// length of a state at `λ = 0.9` over a factor `10³`.
pub fn initial_smax(aperture: &Aperture) -> f64 {
    3.0 * (aperture.tip_s() + 1e3f64.ln() / 0.1f64.sqrt())
}

struct Level {
    mesh: Mesh,
    system: AssembledSystem,
    spectrum: Spectrum,
    record: LevelRecord,
}

fn solve_on(mesh: Mesh, aperture: &Aperture, m: i32, s_max: f64, solver: &EigenSolveParams) -> Result<Level, AnalysisError> {
    let system = assemble_weighted(&mesh, aperture, m, None)?;
    let spectrum = solve_lowest(&system, solver)?;
    let record = LevelRecord::new(s_max, &mesh, &system, &spectrum);
    Ok(Level { mesh, system, spectrum, record })
}

fn shifts(coarse: &[f64], fine: &[f64]) -> Vec<f64> {
    coarse.iter().zip(fine).map(|(c, f)| f - c).collect()
}

/// Converged eigenvalues of the partial wave `m` below the threshold.
///
/// The truncation doubles from `s_max` keeping the old mesh as a prefix, so
/// successive discrete spaces are nested; the accepted level is then
/// refined once and the two mesh levels are extrapolated at order four.
pub fn solve_layer(
    aperture: &Aperture,
    m: i32,
    params: &LayerParams,
    policy: &ConvergencePolicy,
) -> Result<LayerSolution, AnalysisError> {
    if !(policy.truncation_tol > 0.0 && policy.refinement_tol > 0.0) {
        return Err(AnalysisError::BadParameter("tolerances must be positive".into()));
    }
    let k = params.solver.k;
    let (mut s_max, auto) = match policy.truncation {
        Truncation::Auto => (initial_smax(aperture), true),
        Truncation::Fixed(s) => (s, false),
    };
    let mut breaks: Vec<f64> = Vec::new();
    let mut history: Vec<LevelRecord> = Vec::new();
    let mut current: Option<Level> = None;
    let mut truncation_converged = !auto;
    let mut truncation_shift = Vec::new();

    for _ in 0..=policy.max_doublings {
        let domain = build_domain(*aperture, s_max)?;
        let mesh = generate_mesh_with(&domain, &params.mesh.clone().with_breaks(&breaks))?;
        if current.is_some() && mesh.node_count() > policy.max_dofs {
            break;
        }
        let level = solve_on(mesh, aperture, m, s_max, &params.solver)?;
        history.push(level.record.clone());
        if let Some(prev) = &current {
            let (a, b) = (&prev.record.eigenvalues, &level.record.eigenvalues);
            let n = a.len().min(k);
            truncation_shift = shifts(&a[..n], &b[..n.min(b.len())]);
            let same_count = a.len().min(k) == b.len().min(k);
            let settled = truncation_shift.iter().all(|d| d.abs() < policy.truncation_tol);
            current = Some(level);
            if same_count && settled {
                truncation_converged = true;
                break;
            }
        } else {
            current = Some(level);
        }
        if !auto {
            break;
        }
        breaks.push(s_max);
        s_max *= 2.0;
    }
    let accepted = current.expect("the first level is always solved");
    let coarse = accepted.record.eigenvalues.clone();
    let count = coarse.len().min(k);

    let per_trunc: Vec<bool> = (0..count)
        .map(|j| !auto || truncation_shift.get(j).is_some_and(|d| d.abs() < policy.truncation_tol))
        .collect();

    let mut refinement_shift = Vec::new();
    let mut refined = None;
    let finest = if policy.refine && 4 * accepted.system.ndof() <= policy.max_refined_dofs {
        let fine = solve_on(refine_mesh(&accepted.mesh), aperture, m, accepted.record.s_max, &params.solver)?;
        refinement_shift = shifts(&coarse[..count], &fine.record.eigenvalues[..fine.record.eigenvalues.len().min(count)]);
        refined = Some(fine.record.clone());
        fine
    } else {
        accepted
    };

    let fine_vals = &finest.spectrum.eigenvalues;
    let mut eigenvalues = Vec::new();
    let mut error_estimate = Vec::new();
    let mut converged = Vec::new();
    for j in 0..fine_vals.len().min(k) {
        let trunc_err = truncation_shift.get(j).map_or(f64::INFINITY, |d| d.abs());
        let trunc_err = if auto { trunc_err } else { 0.0 };
        match refinement_shift.get(j) {
            Some(&d) => {
                eigenvalues.push(fine_vals[j] + d / 15.0);
                error_estimate.push((d.abs() / 15.0).max(trunc_err));
                converged.push(
                    per_trunc.get(j).copied().unwrap_or(false)
                        && d.abs() < policy.refinement_tol
                        && finest.spectrum.residuals[j] <= params.solver.tol,
                );
            }
            None => {
                eigenvalues.push(fine_vals[j]);
                error_estimate.push(if policy.refine { f64::INFINITY } else { trunc_err });
                converged.push(
                    !policy.refine
                        && per_trunc.get(j).copied().unwrap_or(false)
                        && finest.spectrum.residuals[j] <= params.solver.tol,
                );
            }
        }
    }

    let report = ConvergenceReport {
        s_max: finest.record.s_max,
        levels: history,
        truncation_converged,
        refined,
        truncation_shift,
        refinement_shift,
        error_estimate,
        converged,
    };
    Ok(LayerSolution {
        aperture: *aperture,
        m,
        eigenvalues,
        spectrum: finest.spectrum,
        mesh: finest.mesh,
        system: finest.system,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(s_max: f64, k: usize) -> (LayerParams, ConvergencePolicy) {
        let mut params = LayerParams::with_k(k);
        params.mesh = MeshParams::new(0.5, 1e3).with_far_aspect(2.0);
        let policy = ConvergencePolicy { truncation: Truncation::Fixed(s_max), refine: false, ..Default::default() };
        (params, policy)
    }

    #[test]
    fn initial_truncation_grows_with_the_tip() {
        let a = initial_smax(&Aperture::from_beta_deg(2.5).unwrap());
        let b = initial_smax(&Aperture::from_beta_deg(10.0).unwrap());
        assert!(a > b && b > 3.0 * Aperture::from_beta_deg(10.0).unwrap().tip_s());
    }

    #[test]
    fn fixed_truncation_is_a_single_level() {
        let ap = Aperture::from_theta_deg(60.0).unwrap();
        let (params, policy) = quick(40.0, 2);
        let sol = solve_layer(&ap, 0, &params, &policy).unwrap();
        assert_eq!(sol.report.levels.len(), 1);
        assert!(sol.report.refined.is_none());
        assert!(!sol.eigenvalues.is_empty());
        assert!(sol.eigenvalues.iter().all(|&l| l > 0.5 && l < 1.0));
        assert_eq!(sol.eigenvalues, sol.spectrum.eigenvalues[..sol.eigenvalues.len()].to_vec());
    }

    #[test]
    fn refinement_lowers_and_extrapolates() {
        let ap = Aperture::from_theta_deg(60.0).unwrap();
        let (params, mut policy) = quick(40.0, 1);
        policy.refine = true;
        let sol = solve_layer(&ap, 0, &params, &policy).unwrap();
        let coarse = sol.report.levels[0].eigenvalues[0];
        let fine = sol.spectrum.eigenvalues[0];
        assert!(fine <= coarse + 1e-12);
        let d = fine - coarse;
        assert!((sol.eigenvalues[0] - (fine + d / 15.0)).abs() < 1e-15);
        assert_eq!(sol.report.refinement_shift.len(), 1);
    }

    #[test]
    fn doubling_is_monotone_and_stops() {
        let ap = Aperture::from_theta_deg(60.0).unwrap();
        let (params, mut policy) = quick(20.0, 1);
        policy.truncation = Truncation::Auto;
        policy.refine = false;
        let sol = solve_layer(&ap, 0, &params, &policy).unwrap();
        assert!(sol.report.truncation_converged);
        assert!(sol.report.levels.len() >= 2);
        for w in sol.report.levels.windows(2) {
            assert!(w[1].eigenvalues[0] <= w[0].eigenvalues[0] + 1e-12);
            assert!((w[1].s_max / w[0].s_max - 2.0).abs() < 1e-12);
        }
        assert!(sol.all_converged());
    }
}
