use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::assembly::{assemble_tensor_stiffness, assemble_weighted, p2_gradients, p2_values, AssembledSystem, ElementGeometry, QuadratureRule};
use crate::eigensolve::{solve_lowest, EigenSolveParams, Spectrum};
use crate::geometry::{weight_r, Aperture, BoundaryTag, Mesh, Point2};

/// Subdivision depths of axis-touching elements for the three levels.
pub const FH_LEVELS: [usize; 3] = [2, 4, 6];
/// A sequence of partial sums is accepted as Cauchy when the last increment
/// is at most this fraction of the one before.
pub const CAUCHY_CONTRACTION: f64 = 0.5;
const GAP_FLOOR: f64 = 1e-9;

/// Central differences of one branch at three steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    pub theta: f64,
    /// Zero-based branch index.
    pub j: usize,
    pub step: f64,
    /// Differences at `step`, `step/2`, `step/4`.
    pub differences: [f64; 3],
    /// `(4 D(h/2) - D(h)) / 3`.
    pub richardson: f64,
    /// `(4 D(h/4) - D(h/2)) / 3`.
    pub richardson_fine: f64,
    /// `log2 |D(h) - D(h/2)| / |D(h/2) - D(h/4)|`.
    pub observed_order: f64,
    /// Smallest distance from branch `j` to its neighbours over the samples.
    pub min_gap: f64,
}

/// Central difference of `λ_j` with Richardson refinement. `eval` returns
/// the ascending spectrum at an angle. Fails when the samples reveal a
/// crossing of branch `j` with a neighbour inside `[θ - h, θ + h]`.
pub fn central_difference<F>(theta: f64, j: usize, step: f64, mut eval: F) -> Result<FdEstimate, AnalysisError>
where
    F: FnMut(f64) -> Result<Vec<f64>, AnalysisError>,
{
    if !(step > 0.0) || !(theta - step > 0.0 && theta + step < std::f64::consts::FRAC_PI_2) {
        return Err(AnalysisError::BadParameter(format!("θ ± h = {theta} ± {step} outside (0, π/2)")));
    }
    let offsets = [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0];
    let mut samples = Vec::with_capacity(offsets.len());
    for &o in &offsets {
        let t = theta + o * step;
        let values = eval(t)?;
        if values.len() <= j {
            return Err(AnalysisError::MissingBranch { theta: t, j, available: values.len() });
        }
        samples.push(values);
    }
    let at = |i: usize| samples[i][j];
    let differences = [
        (at(6) - at(0)) / (2.0 * step),
        (at(5) - at(1)) / step,
        (at(4) - at(2)) / (0.5 * step),
    ];

    let below: Vec<Option<f64>> = samples.iter().map(|v| (j > 0).then(|| v[j] - v[j - 1])).collect();
    let above: Vec<Option<f64>> = samples.iter().map(|v| v.get(j + 1).map(|n| n - v[j])).collect();
    let mut min_gap = f64::INFINITY;
    for gaps in [&below, &above] {
        if gaps.iter().any(Option::is_none) {
            continue;
        }
        let g: Vec<f64> = gaps.iter().map(|g| g.expect("checked")).collect();
        let local = g.iter().copied().fold(f64::INFINITY, f64::min);
        min_gap = min_gap.min(local);
        if local < GAP_FLOOR || v_shaped(&offsets, &g) {
            return Err(AnalysisError::BranchCrossing { theta, j, gap: local });
        }
    }

    let (d0, d1, d2) = (differences[0], differences[1], differences[2]);
    Ok(FdEstimate {
        theta,
        j,
        step,
        differences,
        richardson: (4.0 * d1 - d0) / 3.0,
        richardson_fine: (4.0 * d2 - d1) / 3.0,
        observed_order: ((d0 - d1).abs() / (d1 - d2).abs()).log2(),
        min_gap,
    })
}

/// A gap sequence looks like `|θ - θc|` when lines through the two samples
/// on each side of its minimum meet near zero.
fn v_shaped(x: &[f64], g: &[f64]) -> bool {
    let (i, gmin) = g.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
    if i < 2 || i + 2 >= g.len() {
        return false;
    }
    let sl = (g[i - 1] - g[i - 2]) / (x[i - 1] - x[i - 2]);
    let sr = (g[i + 2] - g[i + 1]) / (x[i + 2] - x[i + 1]);
    if !(sl < 0.0 && sr > 0.0) {
        return false;
    }
    let xc = (g[i + 1] - sr * x[i + 1] - g[i - 1] + sl * x[i - 1]) / (sl - sr);
    let gc = g[i - 1] + sl * (xc - x[i - 1]);
    gc < 0.1 * gmin
}

/// Spectrum at angle `to` on the mesh of angle `from` stretched along `s`
/// by `tan(to)/tan(from)`. This family keeps the topology fixed, so the
/// discrete eigenvalues are smooth in the angle.
pub fn scaled_eigenvalues(
    mesh: &Mesh,
    from: &Aperture,
    to: &Aperture,
    m: i32,
    solver: &EigenSolveParams,
) -> Result<Vec<f64>, AnalysisError> {
    let a = to.theta().tan() / from.theta().tan();
    let scaled = mesh.mapped(|p| [a * p[0], p[1]]);
    let system = assemble_weighted(&scaled, to, m, None)?;
    let spec = solve_lowest(&system, solver)?;
    Ok(spec.eigenvalues.iter().copied().chain(spec.above_threshold.iter().map(|p| p.value)).collect())
}

/// Finite-difference derivative of branch `j` on the stretched family of
/// `mesh`, with one extra eigenpair solved for the gap check.
pub fn eigenvalue_derivative_fd(
    mesh: &Mesh,
    aperture: &Aperture,
    j: usize,
    step: f64,
    solver: &EigenSolveParams,
) -> Result<FdEstimate, AnalysisError> {
    let solver = EigenSolveParams { k: solver.k.max(j + 2), ..solver.clone() };
    central_difference(aperture.theta(), j, step, |t| {
        let to = Aperture::from_theta(t)?;
        scaled_eigenvalues(mesh, aperture, &to, 0, &solver)
    })
}

/// Partial sums of the three-term derivative integrand of the flat
/// representative `ψ̃ = r^{1/2} ψ`, one row per subdivision level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTerms {
    /// `[−2/sin2θ ∫|ψ̃_s|², 2/sin2θ ∫|ψ̃_u|², cot2θ ∫ψ̃²/(2r²)]` per level.
    pub levels: Vec<[f64; 3]>,
    /// Last increment over the one before, per term.
    pub contraction: [f64; 3],
    pub cauchy: [bool; 3],
    /// `∫ ψ² dℓ` along the axis.
    pub axis_integral: f64,
    /// Sum of the three terms minus `λ' + 2λ/sin2θ + cot2θ ∫_axis ψ²`.
    pub identity_residual: f64,
}

impl SplitTerms {
    pub fn total(&self, level: usize) -> f64 {
        self.levels[level].iter().sum()
    }
}

/// Feynman–Hellmann derivative of one eigenpair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhEstimate {
    pub theta: f64,
    pub j: usize,
    pub lambda: f64,
    /// `−(4/sin2θ) ∫ r ψ_s² / ∫ r ψ²`.
    pub value: f64,
    /// Partial sums of `∫ r ψ_s²` over the subdivision levels.
    pub partial_sums: Vec<f64>,
    pub cauchy: bool,
    pub split: SplitTerms,
}

fn contraction(sums: &[f64]) -> (f64, bool) {
    let n = sums.len();
    let d1 = (sums[n - 2] - sums[n - 3]).abs();
    let d2 = (sums[n - 1] - sums[n - 2]).abs();
    let scale = sums[n - 1].abs().max(1e-300);
    if d2 <= 1e-12 * scale {
        return (if d1 > 0.0 { d2 / d1 } else { 0.0 }, true);
    }
    let ratio = d2 / d1;
    (ratio, ratio <= CAUCHY_CONTRACTION)
}

struct Integrals {
    weighted_ss: f64,
    terms: [f64; 3],
}

fn touches_axis(l: &[[f64; 3]; 3], corners: &[[f64; 2]; 3], ap: &Aperture, tol: f64) -> bool {
    l.iter().any(|b| {
        let x = corners[0][0] * b[0] + corners[1][0] * b[1] + corners[2][0] * b[2];
        let y = corners[0][1] * b[0] + corners[1][1] * b[1] + corners[2][1] * b[2];
        weight_r(Point2::new(x, y), ap) <= tol
    })
}

fn integrate_element(
    geo: &ElementGeometry,
    v: &[f64; 6],
    ap: &Aperture,
    sub: [[f64; 3]; 3],
    depth: usize,
    rule: &QuadratureRule,
    out: &mut Integrals,
) {
    let tol = 1e-12 * ap.tip_s().max(1.0);
    if depth > 0 && touches_axis(&sub, &geo.corners, ap, tol) {
        let mid = |a: [f64; 3], b: [f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
        let (m01, m12, m20) = (mid(sub[0], sub[1]), mid(sub[1], sub[2]), mid(sub[2], sub[0]));
        for child in [[sub[0], m01, m20], [m01, sub[1], m12], [m20, m12, sub[2]], [m01, m12, m20]] {
            integrate_element(geo, v, ap, child, depth - 1, rule, out);
        }
        return;
    }
    let (sin, cos) = ap.theta().sin_cos();
    let sin2 = (2.0 * ap.theta()).sin();
    let cot2 = (2.0 * ap.theta()).cos() / sin2;
    // area of the sub-triangle relative to the parent
    let det = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2])
    };
    let frac = det(sub[0], sub[1], sub[2]).abs();
    let jac = 2.0 * geo.area * frac;
    for (q, w) in rule.points.iter().zip(&rule.weights) {
        let l = [0, 1, 2].map(|i| q[0] * sub[0][i] + q[1] * sub[1][i] + q[2] * sub[2][i]);
        let phi = p2_values(l);
        let grad = p2_gradients(l, geo.grad_bary);
        let mut psi = 0.0;
        let mut g = [0.0; 2];
        for k in 0..6 {
            psi += v[k] * phi[k];
            g[0] += v[k] * grad[k][0];
            g[1] += v[k] * grad[k][1];
        }
        let p = geo.point(l);
        let r = weight_r(Point2::new(p[0], p[1]), ap).max(0.0);
        let wq = w * jac;
        out.weighted_ss += wq * r * g[0] * g[0];
        if r > 0.0 {
            let rt = r.sqrt();
            let ts = rt * g[0] + cos * psi / (2.0 * rt);
            let tu = rt * g[1] - sin * psi / (2.0 * rt);
            out.terms[0] += wq * (-2.0 / sin2) * ts * ts;
            out.terms[1] += wq * (2.0 / sin2) * tu * tu;
            out.terms[2] += wq * cot2 * psi * psi / (2.0 * r);
        }
    }
}

fn axis_integral(mesh: &Mesh, nodal: &[f64]) -> f64 {
    let (x, w) = crate::assembly::gauss_legendre(3);
    let mut sum = 0.0;
    for e in mesh.boundary.iter().filter(|e| e.tag == BoundaryTag::Axis) {
        let (a, b) = (mesh.nodes[e.ends[0]], mesh.nodes[e.ends[1]]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let (va, vb, vm) = (nodal[e.ends[0]], nodal[e.ends[1]], nodal[e.mid]);
        for (xi, wi) in x.iter().zip(&w) {
            let t = 0.5 * (xi + 1.0);
            let psi = va * (1.0 - t) * (1.0 - 2.0 * t) + vb * t * (2.0 * t - 1.0) + vm * 4.0 * t * (1.0 - t);
            sum += 0.5 * wi * len * psi * psi;
        }
    }
    sum
}

/// Feynman–Hellmann derivative of the `m = 0` eigenpair `j` of `spectrum`
/// computed on `mesh`/`system`, together with the partial sums of the
/// three-term flat integrand under axis-graded quadrature.
pub fn eigenvalue_derivative_fh(
    mesh: &Mesh,
    system: &AssembledSystem,
    aperture: &Aperture,
    j: usize,
    spectrum: &Spectrum,
) -> Result<FhEstimate, AnalysisError> {
    if system.m != 0 {
        return Err(AnalysisError::BadParameter(format!("derivative integral needs m = 0, got {}", system.m)));
    }
    let theta = aperture.theta();
    let (lambda, x) = match (spectrum.eigenvalues.get(j), spectrum.eigenvectors.get(j)) {
        (Some(&l), Some(x)) => (l, x),
        _ => return Err(AnalysisError::MissingBranch { theta, j, available: spectrum.len() }),
    };
    let norm = system.b.bilinear(x, x);
    let sin2 = (2.0 * theta).sin();
    let ass = assemble_tensor_stiffness(mesh, aperture, [[1.0, 0.0], [0.0, 0.0]], system)?;
    let value = -4.0 / sin2 * ass.bilinear(x, x) / norm;

    let nodal = system.to_nodal(x);
    let rule = QuadratureRule::degree5();
    let reference = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut partial_sums = Vec::new();
    let mut levels = Vec::new();
    for &depth in &FH_LEVELS {
        let mut acc = Integrals { weighted_ss: 0.0, terms: [0.0; 3] };
        for t in 0..mesh.triangles.len() {
            let geo = ElementGeometry::new(mesh.triangle_corners(t))
                .ok_or(crate::assembly::AssemblyError::Degenerate(t))?;
            let v = mesh.triangles[t].map(|n| nodal[n]);
            integrate_element(&geo, &v, aperture, reference, depth, &rule, &mut acc);
        }
        partial_sums.push(acc.weighted_ss / norm);
        levels.push(acc.terms.map(|s| s / norm));
    }
    let (_, cauchy) = contraction(&partial_sums);
    let mut ratios = [0.0; 3];
    let mut verdicts = [false; 3];
    for i in 0..3 {
        let sums: Vec<f64> = levels.iter().map(|l| l[i]).collect();
        (ratios[i], verdicts[i]) = contraction(&sums);
    }
    let axis = axis_integral(mesh, &nodal) / norm;
    let cot2 = (2.0 * theta).cos() / sin2;
    let last: f64 = levels.last().expect("three levels").iter().sum();
    let identity_residual = last - (value + 2.0 * lambda / sin2 + cot2 * axis);
    Ok(FhEstimate {
        theta,
        j,
        lambda,
        value,
        partial_sums,
        cauchy,
        split: SplitTerms { levels, contraction: ratios, cauchy: verdicts, axis_integral: axis, identity_residual },
    })
}

/// Finite-difference and Feynman–Hellmann values side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub theta: f64,
    pub j: usize,
    pub fd: f64,
    pub fh: f64,
    pub step: f64,
    /// `|fd - fh| / |fd|`.
    pub discrepancy: f64,
    pub fh_cauchy: bool,
    pub fd_order: f64,
}

impl DerivativeEstimate {
    pub fn new(fd: &FdEstimate, fh: &FhEstimate) -> Self {
        DerivativeEstimate {
            theta: fd.theta,
            j: fd.j,
            fd: fd.richardson,
            fh: fh.value,
            step: fd.step,
            discrepancy: (fd.richardson - fh.value).abs() / fd.richardson.abs(),
            fh_cauchy: fh.cauchy,
            fd_order: fd.observed_order,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stubbed_sine() {
        let theta = 0.7;
        let est = central_difference(theta, 0, 0.05, |t| Ok(vec![t.sin()])).unwrap();
        assert!((est.differences[0] - theta.cos()).abs() < 0.05f64.powi(2));
        assert!((est.richardson - theta.cos()).abs() < 1e-6);
        assert!((est.observed_order - 2.0).abs() < 0.05);
    }

    #[test]
    fn crossing_is_detected() {
        // two lines crossing at θ = 0.7, returned in ascending order
        let r = central_difference(0.7, 0, 0.04, |t| {
            let mut v = vec![0.5 + (t - 0.7), 0.5 - 0.5 * (t - 0.7)];
            v.sort_by(f64::total_cmp);
            Ok(v)
        });
        assert!(matches!(r, Err(AnalysisError::BranchCrossing { .. })));
        let r = central_difference(0.7, 0, 0.04, |t| {
            let mut v = vec![0.5 + (t - 0.71), 0.5 - 0.5 * (t - 0.71)];
            v.sort_by(f64::total_cmp);
            Ok(v)
        });
        assert!(matches!(r, Err(AnalysisError::BranchCrossing { .. })));
        // well separated branches pass
        assert!(central_difference(0.7, 0, 0.04, |t| Ok(vec![t.sin(), 2.0 + t])).is_ok());
    }

    #[test]
    fn missing_branch_and_range() {
        assert!(matches!(
            central_difference(0.7, 2, 0.01, |t| Ok(vec![t])),
            Err(AnalysisError::MissingBranch { .. })
        ));
        assert!(central_difference(0.01, 0, 0.02, |t| Ok(vec![t])).is_err());
    }

    #[test]
    fn contraction_verdicts() {
        assert!(contraction(&[1.0, 1.5, 1.6]).1);
        assert!(!contraction(&[1.0, 1.5, 2.0]).1);
        assert!(contraction(&[2.0, 2.0, 2.0]).1);
    }
}
