use std::f64::consts::PI;

use conelayer::assembly::{apply_dirichlet, assemble_unconstrained, assemble_weighted, ElementGeometry, QuadratureRule};
use conelayer::eigensolve::{solve_dense, solve_lowest, solve_pencil, EigenSolveParams};
use conelayer::geometry::{
    build_domain, generate_mesh_with, map_point, rectangle_mesh, refine_mesh, weight_r, Aperture, BoundaryTag, Chart,
    Mesh, MeshParams, Point2,
};
use proptest::prelude::*;

const WALLS: [BoundaryTag; 4] = [BoundaryTag::WallOuter, BoundaryTag::Truncation, BoundaryTag::WallInner, BoundaryTag::Truncation];

fn layer_mesh(theta_deg: f64, extra: f64, h: f64) -> (Aperture, Mesh) {
    let ap = Aperture::from_theta_deg(theta_deg).unwrap();
    let domain = build_domain(ap, ap.tip_s() + extra).unwrap();
    (ap, generate_mesh_with(&domain, &MeshParams::new(h, 10.0)).unwrap())
}

fn signed_area(p: [Point2; 3]) -> f64 {
    0.5 * ((p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y))
}

proptest! {
    #[test]
    fn chart_round_trips(theta in 0.05f64..1.52, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let ap = Aperture::from_theta(theta).unwrap();
        let p = Point2::new(x, y);
        for from in [Chart::RZ, Chart::SU, Chart::YV] {
            for to in [Chart::RZ, Chart::SU, Chart::YV] {
                let q = map_point(map_point(p, from, to, &ap), to, from, &ap);
                let scale = 1.0 + x.abs().max(y.abs());
                prop_assert!((q.x - p.x).abs() <= 1e-12 * scale * (1.0 + theta.tan()));
                prop_assert!((q.y - p.y).abs() <= 1e-12 * scale * (1.0 + theta.tan()));
            }
        }
    }

    #[test]
    fn charts_preserve_area(theta in 0.05f64..1.52, c in prop::array::uniform6(-10.0f64..10.0)) {
        let ap = Aperture::from_theta(theta).unwrap();
        let su = [Point2::new(c[0], c[1]), Point2::new(c[2], c[3]), Point2::new(c[4], c[5])];
        let a = signed_area(su);
        for chart in [Chart::RZ, Chart::YV] {
            let q = su.map(|p| map_point(p, Chart::SU, chart, &ap));
            prop_assert!((signed_area(q) - a).abs() <= 1e-10 * (1.0 + a.abs()) * (1.0 + theta.tan()));
        }
    }

    #[test]
    fn weight_is_distance_to_axis(theta in 0.05f64..1.52, s in 0.0f64..100.0, u in 0.0f64..3.14) {
        let ap = Aperture::from_theta(theta).unwrap();
        let p = Point2::new(s, u);
        let rz = map_point(p, Chart::SU, Chart::RZ, &ap);
        prop_assert!((weight_r(p, &ap) - rz.x).abs() <= 1e-12 * (1.0 + s));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mesh_vertices_lie_in_the_domain(theta_deg in 10.0f64..85.0, extra in 4.0f64..12.0) {
        let (ap, mesh) = layer_mesh(theta_deg, extra, 0.8);
        let cot = 1.0 / ap.theta().tan();
        for p in &mesh.nodes {
            prop_assert!(p[1] >= -1e-10);
            prop_assert!(p[1] <= (p[0] * cot).min(PI) + 1e-10, "{:?}", p);
        }
        let rule = QuadratureRule::degree5();
        for t in 0..mesh.triangles.len() {
            let g = ElementGeometry::new(mesh.triangle_corners(t)).unwrap();
            for l in &rule.points {
                let q = g.point(*l);
                prop_assert!(weight_r(Point2::new(q[0], q[1]), &ap) >= -1e-12);
            }
        }
    }

    #[test]
    fn weight_scaling_leaves_eigenvalues(c in 0.1f64..10.0) {
        let mesh = rectangle_mesh(2.0, 1.5, 6, 5, WALLS);
        let w = |p: [f64; 2]| 1.0 + p[0];
        let wc = |p: [f64; 2]| c * (1.0 + p[0]);
        let ap = Aperture::from_theta_deg(45.0).unwrap();
        let tags = [BoundaryTag::WallOuter, BoundaryTag::WallInner, BoundaryTag::Truncation];
        let s1 = apply_dirichlet(&assemble_unconstrained(&mesh, &ap, 0, Some(&w)).unwrap(), &mesh, &tags).unwrap();
        let s2 = apply_dirichlet(&assemble_unconstrained(&mesh, &ap, 0, Some(&wc)).unwrap(), &mesh, &tags).unwrap();
        for i in 0..s1.ndof() {
            for (j, v) in s1.a.row(i) {
                prop_assert!((s2.a.get(i, j) - c * v).abs() <= 1e-12 * c * v.abs().max(1.0));
            }
            for (j, v) in s1.b.row(i) {
                prop_assert!((s2.b.get(i, j) - c * v).abs() <= 1e-12 * c * v.abs().max(1e-3));
            }
        }
        let e1 = solve_dense(&s1).unwrap();
        let e2 = solve_dense(&s2).unwrap();
        for (a, b) in e1.eigenvalues.iter().zip(&e2.eigenvalues).take(5) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }
}

fn small_layer() -> (Aperture, Mesh) {
    layer_mesh(70.0, 10.0, 0.6)
}

fn params(k: usize) -> EigenSolveParams {
    EigenSolveParams { k, ..Default::default() }
}

#[test]
fn mass_matrix_is_positive_definite() {
    let (ap, mesh) = layer_mesh(45.0, 3.0, 1.0);
    let sys = assemble_weighted(&mesh, &ap, 0, None).unwrap();
    let n = sys.ndof();
    assert!(n < 1500, "{n}");
    let dense = sys.b.to_dense();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[i][j]);
    let eig = nalgebra::SymmetricEigen::new(m);
    assert!(eig.eigenvalues.min() > 0.0);
    for i in 0..n {
        for (j, v) in sys.a.row(i) {
            assert_eq!(sys.a.get(j, i), v);
        }
    }
}

#[test]
fn eigenvalues_do_not_depend_on_the_shift() {
    let (ap, mesh) = small_layer();
    let sys = assemble_weighted(&mesh, &ap, 0, None).unwrap();
    let base = solve_lowest(&sys, &EigenSolveParams { sigma: 0.1, ..params(2) }).unwrap();
    assert!(!base.eigenvalues.is_empty());
    for sigma in [0.3, 0.5] {
        let other = solve_lowest(&sys, &EigenSolveParams { sigma, ..params(2) }).unwrap();
        assert_eq!(other.eigenvalues.len(), base.eigenvalues.len());
        for (a, b) in base.eigenvalues.iter().zip(&other.eigenvalues) {
            assert!((a - b).abs() <= 10.0 * 1e-9, "{a} {b}");
        }
    }
}

#[test]
fn solves_are_bitwise_deterministic() {
    let (ap, mesh) = small_layer();
    let a = solve_lowest(&assemble_weighted(&mesh, &ap, 0, None).unwrap(), &params(2)).unwrap();
    let b = solve_lowest(&assemble_weighted(&mesh, &ap, 0, None).unwrap(), &params(2)).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.eigenvectors, b.eigenvectors);
}

#[test]
fn nested_refinement_lowers_eigenvalues() {
    let (ap, mesh) = small_layer();
    let fine_mesh = refine_mesh(&mesh);
    let coarse = solve_lowest(&assemble_weighted(&mesh, &ap, 0, None).unwrap(), &params(3)).unwrap();
    let fine = solve_lowest(&assemble_weighted(&fine_mesh, &ap, 0, None).unwrap(), &params(3)).unwrap();
    assert!(fine.eigenvalues.len() >= coarse.eigenvalues.len());
    for (c, f) in coarse.eigenvalues.iter().zip(&fine.eigenvalues) {
        assert!(*f <= c + 1e-9, "{f} > {c}");
    }
}

/// Rayleigh quotient of the interpolated transverse mode `sin u` on a strip
/// far from the tip, with the layer weight and no boundary conditions.
fn transverse_quotient(n: usize) -> f64 {
    let ap = Aperture::from_theta_deg(30.0).unwrap();
    let (s0, len) = (40.0, 4.0);
    let mesh = rectangle_mesh(len, PI, n, n, WALLS).mapped(|p| [p[0] + s0, p[1]]);
    let sys = assemble_unconstrained(&mesh, &ap, 0, None).unwrap();
    let x: Vec<f64> = mesh.nodes.iter().map(|p| p[1].sin()).collect();
    sys.a.bilinear(&x, &x) / sys.b.bilinear(&x, &x)
}

#[test]
fn transverse_mode_has_unit_quotient() {
    let errs: Vec<f64> = [4, 8, 16].iter().map(|&n| (transverse_quotient(n) - 1.0).abs()).collect();
    assert!(errs[2] < 1e-5, "{errs:?}");
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 3.5, "{errs:?}");
    }
}

#[test]
fn unit_square_with_unit_weight() {
    let ap = Aperture::from_theta_deg(45.0).unwrap();
    let one = |_: [f64; 2]| 1.0;
    let tags = [BoundaryTag::WallOuter, BoundaryTag::WallInner, BoundaryTag::Truncation];
    let mesh = rectangle_mesh(1.0, 1.0, 12, 12, WALLS);
    let sys = apply_dirichlet(&assemble_unconstrained(&mesh, &ap, 0, Some(&one)).unwrap(), &mesh, &tags).unwrap();
    let spec = solve_pencil(&sys.a, &sys.b, &EigenSolveParams { k: 1, sigma: 15.0, threshold: 100.0, ..Default::default() })
        .unwrap();
    let exact = 2.0 * PI * PI;
    assert!((spec.eigenvalues[0] - exact).abs() / exact < 1e-3, "{}", spec.eigenvalues[0]);
}
