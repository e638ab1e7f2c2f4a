//! Quadratic finite-element assembly of the partial-wave forms
//!
//! `a(ψ, φ) = ∫ r (∇ψ·∇φ + m² ψφ / r²)`, `b(ψ, φ) = ∫ r ψφ`
//!
//! on a meridian mesh, plus the skew-coordinate variant used as an
//! independent cross-check.

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{rectangle_mesh, weight_r, Aperture, BoundaryTag, Mesh, Point2};
use crate::sparse::{SparseSymmetric, TripletBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("non-finite entry in element {0}")]
    NonFinite(usize),
    #[error("quadrature point on the axis in element {0} with m = {1}")]
    AxisQuadrature(usize, i32),
    #[error("degenerate element {0}")]
    Degenerate(usize),
    #[error("empty system: every node is constrained")]
    Empty,
    #[error("stiffness coefficient is not positive definite (det = {0})")]
    NotDefinite(f64),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Quadrature on the reference triangle `{ξ, η ≥ 0, ξ + η ≤ 1}` in
/// barycentric coordinates; weights sum to the reference area `1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Seven-point symmetric rule exact for degree 5.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let (a, b) = ((6.0 - s15) / 21.0, (9.0 + 2.0 * s15) / 21.0);
        let (c, d) = ((6.0 + s15) / 21.0, (9.0 - 2.0 * s15) / 21.0);
        let (wa, wc) = ((155.0 - s15) / 2400.0, (155.0 + s15) / 2400.0);
        let third = 1.0 / 3.0;
        QuadratureRule {
            points: vec![[third, third, third], [b, a, a], [a, b, a], [a, a, b], [d, c, c], [c, d, c], [c, c, d]],
            weights: vec![9.0 / 80.0, wa, wa, wa, wc, wc, wc],
            degree: 5,
        }
    }

    /// Collapsed Gauss–Legendre product rule with `n` points per direction,
    /// exact for degree `2n - 1`; all points are interior and weights positive.
    pub fn collapsed(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let (xe, we) = gauss_legendre(n + 1);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        // ξ = a(1 - b), η = b on [0,1]²; Jacobian (1 - b); the extra point in
        // b absorbs the Jacobian degree
        for i in 0..n {
            for j in 0..n + 1 {
                let a = 0.5 * (x[i] + 1.0);
                let b = 0.5 * (xe[j] + 1.0);
                let xi = a * (1.0 - b);
                points.push([1.0 - xi - b, xi, b]);
                weights.push(0.25 * w[i] * we[j] * (1.0 - b));
            }
        }
        QuadratureRule { points, weights, degree: 2 * n - 1 }
    }

    /// Rule exact for degree 7 used on axis-touching elements when `m ≠ 0`.
    pub fn degree7() -> Self {
        Self::collapsed(4)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Values of the six quadratic basis functions at barycentric point `l`,
/// ordered vertices then edge midpoints `(0,1)`, `(1,2)`, `(2,0)`.
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// Gradients of the six basis functions given barycentric gradients `g`.
pub fn p2_gradients(l: [f64; 3], g: [[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let v = |i: usize| [(4.0 * l[i] - 1.0) * g[i][0], (4.0 * l[i] - 1.0) * g[i][1]];
    let e = |i: usize, j: usize| {
        [4.0 * (l[j] * g[i][0] + l[i] * g[j][0]), 4.0 * (l[j] * g[i][1] + l[i] * g[j][1])]
    };
    [v(0), v(1), v(2), e(0, 1), e(1, 2), e(2, 0)]
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub corners: [[f64; 2]; 3],
    pub area: f64,
    pub grad_bary: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(p: [[f64; 2]; 3]) -> Option<Self> {
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        if !(det.abs() > 0.0) {
            return None;
        }
        let g = [
            [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
            [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
            [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
        ];
        Some(ElementGeometry { corners: p, area: 0.5 * det.abs(), grad_bary: g })
    }

    pub fn point(&self, l: [f64; 3]) -> [f64; 2] {
        let p = &self.corners;
        [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    WeightedSu,
    SkewYv,
}

/// Matrices over all mesh nodes before boundary conditions.
#[derive(Debug, Clone)]
pub struct UnconstrainedSystem {
    pub a: SparseSymmetric,
    pub b: SparseSymmetric,
    pub m: i32,
    pub formulation: Formulation,
}

/// Stiffness `A` and mass `B` on the free degrees of freedom.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub a: SparseSymmetric,
    pub b: SparseSymmetric,
    /// Mesh node → free index, `None` for constrained nodes.
    pub dof_map: Vec<Option<usize>>,
    /// Free index → mesh node.
    pub free_nodes: Vec<usize>,
    pub m: i32,
    pub formulation: Formulation,
}

impl AssembledSystem {
    pub fn ndof(&self) -> usize {
        self.free_nodes.len()
    }

    /// Expands a free-dof vector to nodal values, zero on constrained nodes.
    pub fn to_nodal(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dof_map.len()];
        for (k, &node) in self.free_nodes.iter().enumerate() {
            out[node] = x[k];
        }
        out
    }

    /// Restricts nodal values to the free dofs.
    pub fn from_nodal(&self, v: &[f64]) -> Vec<f64> {
        self.free_nodes.iter().map(|&n| v[n]).collect()
    }
}

/// Per-point coefficients of a form `∫ w ∇ψ·K∇φ + c ψφ` and `∫ w_b ψφ`.
struct Coefficients<'a> {
    weight: &'a dyn Fn([f64; 2]) -> f64,
    tensor: [[f64; 2]; 2],
    /// `m²` for the `m² ψφ / w` term; zero disables it.
    m2: f64,
}

fn assemble_nodes(
    mesh: &Mesh,
    coeff: &Coefficients<'_>,
    axis_nodes: Option<&[bool]>,
    with_mass: bool,
) -> Result<(SparseSymmetric, Option<SparseSymmetric>), AssemblyError> {
    let n = mesh.node_count();
    let cap = 21 * mesh.triangles.len();
    let mut ab = TripletBuilder::with_capacity(n, cap);
    let mut bb = with_mass.then(|| TripletBuilder::with_capacity(n, cap));
    let r5 = QuadratureRule::degree5();
    let r7 = QuadratureRule::degree7();
    let k = coeff.tensor;
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let geo = ElementGeometry::new(mesh.triangle_corners(e)).ok_or(AssemblyError::Degenerate(e))?;
        let touches_axis = axis_nodes.is_some_and(|ax| tri[..3].iter().any(|&v| ax[v]));
        let rule = if coeff.m2 != 0.0 && touches_axis { &r7 } else { &r5 };
        let mut ka = [[0.0; 6]; 6];
        let mut kb = [[0.0; 6]; 6];
        for (l, &wq) in rule.points.iter().zip(&rule.weights) {
            let x = geo.point(*l);
            let w = (coeff.weight)(x);
            let jw = 2.0 * geo.area * wq;
            let phi = p2_values(*l);
            let grad = p2_gradients(*l, geo.grad_bary);
            let pot = if coeff.m2 != 0.0 {
                if !(w > 0.0) {
                    return Err(AssemblyError::AxisQuadrature(e, coeff.m2.sqrt() as i32));
                }
                coeff.m2 / w
            } else {
                0.0
            };
            for i in 0..6 {
                let kg = [
                    k[0][0] * grad[i][0] + k[0][1] * grad[i][1],
                    k[1][0] * grad[i][0] + k[1][1] * grad[i][1],
                ];
                for j in i..6 {
                    let s = kg[0] * grad[j][0] + kg[1] * grad[j][1];
                    ka[i][j] += jw * (w * s + pot * phi[i] * phi[j]);
                    kb[i][j] += jw * w * phi[i] * phi[j];
                }
            }
        }
        for i in 0..6 {
            for j in i..6 {
                if !ka[i][j].is_finite() || !kb[i][j].is_finite() {
                    return Err(AssemblyError::NonFinite(e));
                }
                ab.add(tri[i], tri[j], ka[i][j]);
                if let Some(bb) = bb.as_mut() {
                    bb.add(tri[i], tri[j], kb[i][j]);
                }
            }
        }
    }
    Ok((ab.build(), bb.map(TripletBuilder::build)))
}

fn axis_flags(mesh: &Mesh) -> Vec<bool> {
    let mut f = vec![false; mesh.node_count()];
    for v in mesh.nodes_on(&[BoundaryTag::Axis]) {
        f[v] = true;
    }
    f
}

/// Tags constrained for partial wave `m`: the walls and the truncation
/// always, the axis only when `m ≠ 0`.
pub fn dirichlet_tags(m: i32) -> Vec<BoundaryTag> {
    let mut t = vec![BoundaryTag::WallOuter, BoundaryTag::WallInner, BoundaryTag::Truncation];
    if m != 0 {
        t.push(BoundaryTag::Axis);
    }
    t
}

/// Assembles the weighted partial-wave forms on an `SU` mesh without
/// boundary conditions. `weight_override` replaces the weight `r`.
pub fn assemble_unconstrained(
    mesh: &Mesh,
    aperture: &Aperture,
    m: i32,
    weight_override: Option<&dyn Fn([f64; 2]) -> f64>,
) -> Result<UnconstrainedSystem, AssemblyError> {
    let ap = *aperture;
    let default_w = move |p: [f64; 2]| weight_r(Point2::new(p[0], p[1]), &ap);
    let weight: &dyn Fn([f64; 2]) -> f64 = match weight_override {
        Some(w) => w,
        None => &default_w,
    };
    let axis = axis_flags(mesh);
    let coeff = Coefficients { weight, tensor: [[1.0, 0.0], [0.0, 1.0]], m2: (m as f64).powi(2) };
    let (a, b) = assemble_nodes(mesh, &coeff, Some(&axis), true)?;
    Ok(UnconstrainedSystem { a, b: b.expect("mass requested"), m, formulation: Formulation::WeightedSu })
}

/// Weighted partial-wave system with the Dirichlet conditions for `m`.
pub fn assemble_weighted(
    mesh: &Mesh,
    aperture: &Aperture,
    m: i32,
    weight_override: Option<&dyn Fn([f64; 2]) -> f64>,
) -> Result<AssembledSystem, AssemblyError> {
    let raw = assemble_unconstrained(mesh, aperture, m, weight_override)?;
    apply_dirichlet(&raw, mesh, &dirichlet_tags(m))
}

/// Eliminates nodes lying on boundary pieces with the given tags.
pub fn apply_dirichlet(
    system: &UnconstrainedSystem,
    mesh: &Mesh,
    tags: &[BoundaryTag],
) -> Result<AssembledSystem, AssemblyError> {
    let n = mesh.node_count();
    let mut constrained = vec![false; n];
    for v in mesh.nodes_on(tags) {
        constrained[v] = true;
    }
    let free_nodes: Vec<usize> = (0..n).filter(|&i| !constrained[i]).collect();
    if free_nodes.is_empty() {
        return Err(AssemblyError::Empty);
    }
    let mut dof_map = vec![None; n];
    for (k, &v) in free_nodes.iter().enumerate() {
        dof_map[v] = Some(k);
    }
    Ok(AssembledSystem {
        a: system.a.restrict(&free_nodes),
        b: system.b.restrict(&free_nodes),
        dof_map,
        free_nodes,
        m: system.m,
        formulation: system.formulation,
    })
}

/// Weighted stiffness with a general constant tensor, `∫ r ∇ψ·K∇φ`, on the
/// free dofs of `system` (`m = 0` forms only). With `K = e_s e_sᵀ` this is
/// the longitudinal part of the stiffness.
pub fn assemble_tensor_stiffness(
    mesh: &Mesh,
    aperture: &Aperture,
    tensor: [[f64; 2]; 2],
    system: &AssembledSystem,
) -> Result<SparseSymmetric, AssemblyError> {
    let ap = *aperture;
    let weight = move |p: [f64; 2]| weight_r(Point2::new(p[0], p[1]), &ap);
    let coeff = Coefficients { weight: &weight, tensor, m2: 0.0 };
    let (a, _) = assemble_nodes(mesh, &coeff, None, false)?;
    Ok(a.restrict(&system.free_nodes))
}

/// Structured grid for the skew formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewGrid {
    pub nx: usize,
    pub ny: usize,
}

/// Coefficient tensor of the `m = 0` form transplanted to skew coordinates
/// `y = s - u tan θ`, `v = u`: `[[sec²θ, -tan θ], [-tan θ, 1]]`.
pub fn skew_tensor(aperture: &Aperture) -> [[f64; 2]; 2] {
    let t = aperture.theta().tan();
    [[1.0 + t * t, -t], [-t, 1.0]]
}

/// Assembles the `m = 0` form on the rectangle `(0, y_max) × (0, π)` in skew
/// coordinates with weight `y cos θ`. The side `y = 0` is the symmetry axis
/// (natural); the other three sides are Dirichlet.
pub fn assemble_skew(
    aperture: &Aperture,
    y_max: f64,
    grid: SkewGrid,
) -> Result<(Mesh, AssembledSystem), AssemblyError> {
    if !(y_max > 0.0) || grid.nx == 0 || grid.ny == 0 {
        return Err(AssemblyError::BadParameter(format!("y_max = {y_max}, grid = {grid:?}")));
    }
    let k = skew_tensor(aperture);
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    if !(det > 0.0 && k[0][0] > 0.0) {
        return Err(AssemblyError::NotDefinite(det));
    }
    let mesh = rectangle_mesh(
        y_max,
        PI,
        grid.nx,
        grid.ny,
        [BoundaryTag::Axis, BoundaryTag::WallOuter, BoundaryTag::Truncation, BoundaryTag::WallInner],
    );
    let cos = aperture.theta().cos();
    let weight = move |p: [f64; 2]| p[0] * cos;
    let coeff = Coefficients { weight: &weight, tensor: k, m2: 0.0 };
    let (a, b) = assemble_nodes(&mesh, &coeff, None, true)?;
    let raw = UnconstrainedSystem { a, b: b.expect("mass requested"), m: 0, formulation: Formulation::SkewYv };
    let sys = apply_dirichlet(&raw, &mesh, &dirichlet_tags(0))?;
    Ok((mesh, sys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, generate_mesh};

    fn integrate(rule: &QuadratureRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        rule.points.iter().zip(&rule.weights).map(|(l, w)| w * f(l[1], l[2])).sum()
    }

    // ∫ ξ^a η^b over the reference triangle = a! b! / (a + b + 2)!
    fn exact_monomial(a: u32, b: u32) -> f64 {
        let f = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn rules_exact_to_their_degree() {
        for rule in [QuadratureRule::degree5(), QuadratureRule::degree7()] {
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 0.5).abs() < 1e-15);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for a in 0..=rule.degree as u32 {
                for b in 0..=(rule.degree as u32 - a) {
                    let q = integrate(&rule, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!((q - exact_monomial(a, b)).abs() < 1e-15, "degree {a}+{b}");
                }
            }
        }
        assert!(QuadratureRule::degree7().degree >= 7);
    }

    #[test]
    fn p2_mass_matches_closed_form() {
        // unit-weight mass matrix of the reference triangle, times 360
        let exact = [
            [6.0, -1.0, -1.0, 0.0, -4.0, 0.0],
            [-1.0, 6.0, -1.0, 0.0, 0.0, -4.0],
            [-1.0, -1.0, 6.0, -4.0, 0.0, 0.0],
            [0.0, 0.0, -4.0, 32.0, 16.0, 16.0],
            [-4.0, 0.0, 0.0, 16.0, 32.0, 16.0],
            [0.0, -4.0, 0.0, 16.0, 16.0, 32.0],
        ];
        let rule = QuadratureRule::degree5();
        for i in 0..6 {
            for j in 0..6 {
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, w)| w * p2_values(*l)[i] * p2_values(*l)[j])
                    .sum();
                assert!((q - exact[i][j] / 360.0).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let ap = Aperture::from_theta_deg(45.0).unwrap();
        let d = build_domain(ap, 8.0).unwrap();
        let mesh = generate_mesh(&d, 0.5, 2.0).unwrap();
        let raw = assemble_unconstrained(&mesh, &ap, 0, None).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        let r = raw.a.mul_vec(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        // B sums to ∫ r over the domain
        let total = raw.b.bilinear(&ones, &ones);
        let (s, c) = ap.theta().sin_cos();
        // ∫∫ (s c - u s) over the tip triangle and the strip
        let tip = ap.tip_s();
        let strip = c * PI * (8.0f64.powi(2) - tip * tip) / 2.0 - s * PI * PI / 2.0 * (8.0 - tip);
        let tri: f64 = {
            // u from 0 to s cot θ, s from 0 to tip
            let cot = c / s;
            c * cot * tip.powi(3) / 3.0 - s * cot * cot * tip.powi(3) / 6.0
        };
        assert!((total - strip - tri).abs() < 1e-10 * total, "{total} vs {}", strip + tri);
    }

    #[test]
    fn dirichlet_counts_and_identity() {
        let ap = Aperture::from_theta_deg(45.0).unwrap();
        let d = build_domain(ap, 6.0).unwrap();
        let mesh = generate_mesh(&d, 0.5, 1.0).unwrap();
        let raw = assemble_unconstrained(&mesh, &ap, 0, None).unwrap();
        let none = apply_dirichlet(&raw, &mesh, &[]).unwrap();
        assert_eq!(none.a, raw.a);
        assert_eq!(none.b, raw.b);
        let tags = dirichlet_tags(0);
        let sys = apply_dirichlet(&raw, &mesh, &tags).unwrap();
        assert_eq!(sys.ndof(), mesh.node_count() - mesh.nodes_on(&tags).len());
        let all = apply_dirichlet(&raw, &mesh, &BoundaryTag::ALL);
        assert!(all.is_ok());
    }

    #[test]
    fn element_matrices_symmetric_in_skew_form() {
        let ap = Aperture::from_theta_deg(60.0).unwrap();
        let (_, sys) = assemble_skew(&ap, 5.0, SkewGrid { nx: 6, ny: 4 }).unwrap();
        let d = sys.a.to_dense();
        for i in 0..d.len() {
            for j in 0..d.len() {
                assert_eq!(d[i][j], d[j][i]);
            }
        }
        let t = skew_tensor(&Aperture::from_theta(1e-9).unwrap());
        assert!((t[0][1]).abs() < 1e-8 && (t[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn axis_quadrature_rejected_for_m_nonzero() {
        let ap = Aperture::from_theta_deg(45.0).unwrap();
        let d = build_domain(ap, 6.0).unwrap();
        let mesh = generate_mesh(&d, 0.5, 1.0).unwrap();
        let zero = |_: [f64; 2]| 0.0;
        let err = assemble_weighted(&mesh, &ap, 1, Some(&zero)).unwrap_err();
        assert!(matches!(err, AssemblyError::AxisQuadrature(..)));
        assert!(assemble_weighted(&mesh, &ap, 2, None).is_ok());
    }
}
