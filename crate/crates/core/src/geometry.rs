//! Meridian cross-section of the conical layer.
//!
//! The layer is the solid of revolution generated by the half-strip between
//! the lines `z = r tan θ` and `z = r tan θ + π sec θ`, so the layer has unit
//! normal thickness `π`. Three planar charts describe the meridian half-plane:
//!
//! * `RZ`: cylindrical radius and height, `(r, z)`;
//! * `SU`: rotated coordinates, `s = r cos θ + z sin θ`, `u = -r sin θ + z cos θ`,
//!   in which the layer is `0 < u < min(π, s cot θ)`;
//! * `YV`: skew coordinates, `y = s - u tan θ`, `v = u`, in which the
//!   half-strip becomes the rectangle `y > 0, 0 < v < π`.
//!
//! Meshes live in the `SU` chart. The rotation to `RZ` is an isometry, so
//! gradients and areas agree between the two charts.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("angle θ = {0} rad is outside the open interval (0, π/2)")]
    AngleOutOfRange(f64),
    #[error("truncation s_max = {s_max} must lie beyond the inner tip at s = {tip}")]
    TruncationAtTip { s_max: f64, tip: f64 },
    #[error("invalid mesh parameter: {0}")]
    BadParameter(String),
    #[error("mesh quality threshold not met: min angle {min_angle_deg:.2}° < {required_deg}°")]
    Quality { min_angle_deg: f64, required_deg: f64 },
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
}

/// Cone aperture. `theta` is the angle of the outer generator against the
/// horizontal; `beta = π/2 - theta` is the half-aperture measured from the
/// symmetry axis (small `beta` means a sharp cone).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aperture {
    theta: f64,
    beta: f64,
}

impl Aperture {
    pub fn from_theta(theta: f64) -> Result<Self, GeometryError> {
        if !(theta > 0.0 && theta < FRAC_PI_2) || !theta.is_finite() {
            return Err(GeometryError::AngleOutOfRange(theta));
        }
        Ok(Aperture { theta, beta: FRAC_PI_2 - theta })
    }

    pub fn from_beta(beta: f64) -> Result<Self, GeometryError> {
        if !(beta > 0.0 && beta < FRAC_PI_2) || !beta.is_finite() {
            return Err(GeometryError::AngleOutOfRange(FRAC_PI_2 - beta));
        }
        Ok(Aperture { theta: FRAC_PI_2 - beta, beta })
    }

    pub fn from_theta_deg(deg: f64) -> Result<Self, GeometryError> {
        Self::from_theta(deg.to_radians())
    }

    pub fn from_beta_deg(deg: f64) -> Result<Self, GeometryError> {
        Self::from_beta(deg.to_radians())
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Position `s` of the inner cone tip along the strip axis, `π tan θ`.
    pub fn tip_s(&self) -> f64 {
        PI * self.theta.tan()
    }
}

/// Planar coordinate chart of the meridian half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    RZ,
    SU,
    YV,
}

/// A point in some chart; the chart is tracked by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

fn to_su(p: Point2, from: Chart, ap: &Aperture) -> Point2 {
    let (sin, cos) = ap.theta.sin_cos();
    match from {
        Chart::SU => p,
        Chart::RZ => Point2::new(p.x * cos + p.y * sin, -p.x * sin + p.y * cos),
        Chart::YV => Point2::new(p.x + p.y * ap.theta.tan(), p.y),
    }
}

fn from_su(p: Point2, to: Chart, ap: &Aperture) -> Point2 {
    let (sin, cos) = ap.theta.sin_cos();
    match to {
        Chart::SU => p,
        Chart::RZ => Point2::new(p.x * cos - p.y * sin, p.x * sin + p.y * cos),
        Chart::YV => Point2::new(p.x - p.y * ap.theta.tan(), p.y),
    }
}

/// Maps a point between charts. All maps are affine and total.
pub fn map_point(p: Point2, from: Chart, to: Chart, ap: &Aperture) -> Point2 {
    if from == to {
        return p;
    }
    from_su(to_su(p, from, ap), to, ap)
}

/// Distance to the symmetry axis of an `SU` point, `s cos θ - u sin θ`.
pub fn weight_r(p: Point2, ap: &Aperture) -> f64 {
    let (sin, cos) = ap.theta.sin_cos();
    p.x * cos - p.y * sin
}

/// Boundary pieces of the meridian domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Outer cone surface, `u = 0`.
    WallOuter,
    /// Inner cone surface, `u = π`, `s ≥ π tan θ`.
    WallInner,
    /// Symmetry axis, `u = s cot θ`, `s ≤ π tan θ`.
    Axis,
    /// Artificial truncation wall, `s = s_max`.
    Truncation,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::WallOuter,
        BoundaryTag::WallInner,
        BoundaryTag::Axis,
        BoundaryTag::Truncation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryTag::WallOuter => "WALL_OUTER",
            BoundaryTag::WallInner => "WALL_INNER",
            BoundaryTag::Axis => "AXIS",
            BoundaryTag::Truncation => "TRUNCATION",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoundaryTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown boundary tag `{s}`"))
    }
}

/// Truncated meridian domain `{0 ≤ s ≤ s_max, 0 < u < min(π, s cot θ)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeridianDomain {
    pub aperture: Aperture,
    pub s_max: f64,
}

impl MeridianDomain {
    pub fn tip_su(&self) -> Point2 {
        Point2::new(self.aperture.tip_s(), PI)
    }

    pub fn tip_rz(&self) -> Point2 {
        Point2::new(0.0, PI / self.aperture.theta.cos())
    }

    /// Upper boundary height `min(π, s cot θ)` at abscissa `s`.
    pub fn height(&self, s: f64) -> f64 {
        (s / self.aperture.theta.tan()).min(PI)
    }

    /// Closed-domain membership test with slack `eps`.
    pub fn contains(&self, p: Point2, eps: f64) -> bool {
        p.x >= -eps && p.x <= self.s_max + eps && p.y >= -eps && p.y <= self.height(p.x) + eps
    }

    /// Largest `z` reached by the truncated domain.
    pub fn z_extent(&self) -> f64 {
        let ap = &self.aperture;
        map_point(Point2::new(self.s_max, PI), Chart::SU, Chart::RZ, ap).y
    }
}

pub fn build_domain(aperture: Aperture, s_max: f64) -> Result<MeridianDomain, GeometryError> {
    let tip = aperture.tip_s();
    if !(s_max > tip) || !s_max.is_finite() {
        return Err(GeometryError::TruncationAtTip { s_max, tip });
    }
    Ok(MeridianDomain { aperture, s_max })
}

/// A tagged boundary edge of a quadratic mesh: two corner nodes and the
/// midpoint node between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub ends: [usize; 2],
    pub mid: usize,
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeshQuality {
    /// Smallest interior angle over all triangles, degrees.
    pub min_angle_deg: f64,
    /// Smallest angle not located at a domain corner sharper than the
    /// quality threshold (such angles cannot be improved by any mesh).
    pub min_free_angle_deg: f64,
    /// Largest ratio of longest edge to smallest altitude.
    pub max_aspect: f64,
}

/// Conforming quadratic (six-node) triangle mesh.
///
/// Node `i` of `nodes` is a point in the mesh chart (`SU` for layer meshes).
/// Triangles list corners counter-clockwise followed by the midpoints of
/// edges `(0,1)`, `(1,2)`, `(2,0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 6]>,
    pub boundary: Vec<BoundaryEdge>,
    pub quality: MeshQuality,
    /// Corner node of the domain whose angle is excluded from the free
    /// angle statistic.
    pub sharp_corner: Option<usize>,
}

pub const MIN_ANGLE_DEG: f64 = 15.0;

/// Radius over which the tip grading grows back to the bulk size.
pub const TIP_ZONE: f64 = 10.0;

/// Exponent of the power-law size function inside the tip zone.
pub const TIP_GRADING_EXPONENT: f64 = 0.7;

/// Mesh size controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshParams {
    /// Target edge length away from the tip.
    pub h: f64,
    /// Edge length at the inner tip is `h / grading`.
    pub grading: f64,
    /// Longitudinal/transverse size ratio reached far from the tip (≥ 1).
    pub far_aspect: f64,
    /// Extra abscissae that must coincide with mesh columns; used to keep
    /// meshes of nested truncations nested.
    pub breaks: Vec<f64>,
}

impl MeshParams {
    pub fn new(h: f64, grading: f64) -> Self {
        MeshParams { h, grading, far_aspect: 1.0, breaks: Vec::new() }
    }

    pub fn with_far_aspect(mut self, aspect: f64) -> Self {
        self.far_aspect = aspect;
        self
    }

    pub fn with_breaks(mut self, breaks: &[f64]) -> Self {
        self.breaks = breaks.to_vec();
        self
    }
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams::new(0.25, 4.0)
    }
}

/// Linear (three-node) triangulation used while building meshes.
#[derive(Debug, Clone, Default)]
struct CornerMesh {
    verts: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    edges: Vec<([usize; 2], BoundaryTag)>,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn triangle_angles(p: [[f64; 2]; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for k in 0..3 {
        let a = sub(p[(k + 1) % 3], p[k]);
        let b = sub(p[(k + 2) % 3], p[k]);
        let c = a[0] * b[0] + a[1] * b[1];
        out[k] = cross(a, b).abs().atan2(c).to_degrees();
    }
    out
}

impl CornerMesh {
    fn push_vertex(&mut self, p: [f64; 2]) -> usize {
        self.verts.push(p);
        self.verts.len() - 1
    }

    fn push_tri(&mut self, a: usize, b: usize, c: usize) {
        let area = cross(sub(self.verts[b], self.verts[a]), sub(self.verts[c], self.verts[a]));
        if area > 0.0 {
            self.tris.push([a, b, c]);
        } else {
            self.tris.push([a, c, b]);
        }
    }

    /// Triangulates the band between two node columns ordered bottom to top,
    /// always closing the shorter diagonal.
    fn zip(&mut self, left: &[usize], right: &[usize]) {
        let (mut i, mut j) = (0, 0);
        while i + 1 < left.len() || j + 1 < right.len() {
            let advance_left = if i + 1 == left.len() {
                false
            } else if j + 1 == right.len() {
                true
            } else {
                let dl = dist(self.verts[left[i + 1]], self.verts[right[j]]);
                let dr = dist(self.verts[left[i]], self.verts[right[j + 1]]);
                dl < dr
            };
            if advance_left {
                self.push_tri(left[i], right[j], left[i + 1]);
                i += 1;
            } else {
                self.push_tri(left[i], right[j], right[j + 1]);
                j += 1;
            }
        }
    }

    /// Red refinement into four similar children per triangle.
    fn red_refine(&self) -> CornerMesh {
        let mut out = CornerMesh { verts: self.verts.clone(), ..Default::default() };
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |out: &mut CornerMesh, a: usize, b: usize| -> usize {
            *mids.entry(edge_key(a, b)).or_insert_with(|| {
                let (p, q) = (out.verts[a], out.verts[b]);
                out.push_vertex([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])])
            })
        };
        for t in &self.tris {
            let m01 = mid(&mut out, t[0], t[1]);
            let m12 = mid(&mut out, t[1], t[2]);
            let m20 = mid(&mut out, t[2], t[0]);
            out.tris.push([t[0], m01, m20]);
            out.tris.push([m01, t[1], m12]);
            out.tris.push([m20, m12, t[2]]);
            out.tris.push([m01, m12, m20]);
        }
        for &([a, b], tag) in &self.edges {
            let m = mid(&mut out, a, b);
            out.edges.push(([a, m], tag));
            out.edges.push(([m, b], tag));
        }
        out
    }

    fn into_quadratic(self, sharp_corner: Option<usize>) -> Mesh {
        let mut nodes = self.verts.clone();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut triangles = Vec::with_capacity(self.tris.len());
        let mut mid = |nodes: &mut Vec<[f64; 2]>, a: usize, b: usize| -> usize {
            *mids.entry(edge_key(a, b)).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        for t in &self.tris {
            let m01 = mid(&mut nodes, t[0], t[1]);
            let m12 = mid(&mut nodes, t[1], t[2]);
            let m20 = mid(&mut nodes, t[2], t[0]);
            triangles.push([t[0], t[1], t[2], m01, m12, m20]);
        }
        let boundary = self
            .edges
            .iter()
            .map(|&([a, b], tag)| BoundaryEdge { ends: [a, b], mid: mid(&mut nodes, a, b), tag })
            .collect();
        let mut mesh = Mesh { nodes, triangles, boundary, quality: MeshQuality::default(), sharp_corner };
        mesh.quality = mesh.compute_quality();
        mesh
    }
}

/// Newest-vertex bisection on a linear triangulation. Each triangle stores
/// its newest vertex first, so its refinement edge is `(t[1], t[2])`.
struct Bisection {
    mesh: CornerMesh,
    alive: Vec<bool>,
    adjacency: HashMap<(usize, usize), Vec<usize>>,
    boundary: HashMap<(usize, usize), BoundaryTag>,
    mids: HashMap<(usize, usize), usize>,
}

impl Bisection {
    fn new(mut mesh: CornerMesh) -> Self {
        // label the longest edge (ties by vertex index) as refinement edge
        for t in mesh.tris.iter_mut() {
            let mut best = 0;
            let mut best_key = (0.0, (0, 0));
            for k in 0..3 {
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                let key = (dist(mesh.verts[a], mesh.verts[b]), edge_key(a, b));
                if k == 0 || key.0 > best_key.0 || (key.0 == best_key.0 && key.1 > best_key.1) {
                    best = k;
                    best_key = key;
                }
            }
            t.rotate_left(best);
        }
        let mut adjacency: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, t) in mesh.tris.iter().enumerate() {
            for k in 0..3 {
                adjacency.entry(edge_key(t[k], t[(k + 1) % 3])).or_default().push(i);
            }
        }
        let boundary = mesh.edges.iter().map(|&([a, b], tag)| (edge_key(a, b), tag)).collect();
        let alive = vec![true; mesh.tris.len()];
        Bisection { mesh, alive, adjacency, boundary, mids: HashMap::new() }
    }

    fn neighbor(&self, t: usize, e: (usize, usize)) -> Option<usize> {
        self.adjacency.get(&e).and_then(|v| v.iter().copied().find(|&n| n != t && self.alive[n]))
    }

    fn ref_edge(&self, t: usize) -> (usize, usize) {
        let tri = self.mesh.tris[t];
        edge_key(tri[1], tri[2])
    }

    fn midpoint(&mut self, e: (usize, usize)) -> usize {
        if let Some(&m) = self.mids.get(&e) {
            return m;
        }
        let (p, q) = (self.mesh.verts[e.0], self.mesh.verts[e.1]);
        let m = self.mesh.push_vertex([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
        self.mids.insert(e, m);
        if let Some(tag) = self.boundary.remove(&e) {
            self.boundary.insert(edge_key(e.0, m), tag);
            self.boundary.insert(edge_key(m, e.1), tag);
        }
        m
    }

    fn split(&mut self, t: usize) {
        let [v0, v1, v2] = self.mesh.tris[t];
        let m = self.midpoint(edge_key(v1, v2));
        self.alive[t] = false;
        for child in [[m, v0, v1], [m, v2, v0]] {
            let id = self.mesh.tris.len();
            self.mesh.tris.push(child);
            self.alive.push(true);
            for k in 0..3 {
                self.adjacency.entry(edge_key(child[k], child[(k + 1) % 3])).or_default().push(id);
            }
        }
    }

    fn refine(&mut self, t: usize, depth: usize) -> Result<(), GeometryError> {
        if depth > 64 {
            return Err(GeometryError::NonConforming("bisection recursion did not terminate".into()));
        }
        if !self.alive[t] {
            return Ok(());
        }
        let e = self.ref_edge(t);
        match self.neighbor(t, e) {
            None => self.split(t),
            Some(n) => {
                if self.ref_edge(n) != e {
                    self.refine(n, depth + 1)?;
                }
                let n = self
                    .neighbor(t, e)
                    .ok_or_else(|| GeometryError::NonConforming("lost neighbour during bisection".into()))?;
                if self.ref_edge(n) != e {
                    return Err(GeometryError::NonConforming("incompatible refinement edge".into()));
                }
                self.split(t);
                self.split(n);
            }
        }
        Ok(())
    }

    fn finish(self) -> CornerMesh {
        let Bisection { mesh, alive, boundary, .. } = self;
        let tris = mesh.tris.iter().zip(&alive).filter(|(_, &a)| a).map(|(t, _)| *t).collect();
        // keep boundary edges in a deterministic order
        let mut edges: Vec<([usize; 2], BoundaryTag)> = boundary.into_iter().map(|((a, b), t)| ([a, b], t)).collect();
        edges.sort_by_key(|&([a, b], t)| (t, a, b));
        CornerMesh { verts: mesh.verts, tris, edges }
    }
}

/// Grades a triangulation towards `center`: triangles are bisected until the
/// longest edge of each is at most `size(distance to center)`.
fn grade_towards(
    mesh: CornerMesh,
    center: [f64; 2],
    size: impl Fn(f64) -> f64,
) -> Result<CornerMesh, GeometryError> {
    let mut bis = Bisection::new(mesh);
    loop {
        let mut marked = Vec::new();
        for t in 0..bis.mesh.tris.len() {
            if !bis.alive[t] {
                continue;
            }
            let p = bis.mesh.tris[t].map(|v| bis.mesh.verts[v]);
            let longest = dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0]));
            let d = point_triangle_distance(center, p);
            if longest > size(d) * (1.0 + 1e-12) {
                marked.push(t);
            }
        }
        if marked.is_empty() {
            break;
        }
        for t in marked {
            bis.refine(t, 0)?;
        }
    }
    Ok(bis.finish())
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn point_triangle_distance(p: [f64; 2], t: [[f64; 2]; 3]) -> f64 {
    let inside = (0..3).all(|k| cross(sub(t[(k + 1) % 3], t[k]), sub(p, t[k])) >= 0.0);
    if inside {
        return 0.0;
    }
    (0..3).map(|k| point_segment_distance(p, t[k], t[(k + 1) % 3])).fold(f64::INFINITY, f64::min)
}

/// Column positions along the bottom wall, marching from `start` to `end`
/// with local step `step(s)` and landing exactly on every break. A final
/// step of up to `stretch(s)` local steps is taken in one piece.
fn march(
    start: f64,
    end: f64,
    breaks: &[f64],
    step: impl Fn(f64) -> f64,
    stretch: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut stops: Vec<f64> = breaks.iter().copied().filter(|&b| b > start && b < end).collect();
    stops.push(end);
    stops.sort_by(f64::total_cmp);
    stops.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut out = vec![start];
    let mut s = start;
    for stop in stops {
        while s < stop {
            let d = step(s);
            let remaining = stop - s;
            let k = stretch(s);
            let next = if remaining <= k * d {
                stop
            } else if remaining <= 2.0 * d {
                s + 0.5 * remaining
            } else {
                s + d
            };
            out.push(next);
            s = next;
        }
    }
    out
}

fn column(bottom: [f64; 2], top: [f64; 2], h: f64, mesh: &mut CornerMesh) -> Vec<usize> {
    let len = dist(bottom, top);
    let n = ((len / h).ceil() as usize).max(1);
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let p = if k == n {
                top
            } else {
                [bottom[0] + t * (top[0] - bottom[0]), bottom[1] + t * (top[1] - bottom[1])]
            };
            mesh.push_vertex(p)
        })
        .collect()
}

/// Generates a conforming quadratic mesh of the truncated domain.
pub fn generate_mesh(domain: &MeridianDomain, h: f64, grading: f64) -> Result<Mesh, GeometryError> {
    generate_mesh_with(domain, &MeshParams::new(h, grading))
}

pub fn generate_mesh_with(domain: &MeridianDomain, params: &MeshParams) -> Result<Mesh, GeometryError> {
    let h = params.h;
    if !(h > 0.0) || !h.is_finite() {
        return Err(GeometryError::BadParameter(format!("h = {h} must be positive")));
    }
    if !(params.grading >= 1.0) {
        return Err(GeometryError::BadParameter(format!("grading = {} must be ≥ 1", params.grading)));
    }
    if !(params.far_aspect >= 1.0 && params.far_aspect <= 3.5) {
        return Err(GeometryError::BadParameter(format!(
            "far_aspect = {} must lie in [1, 3.5]",
            params.far_aspect
        )));
    }
    let ap = domain.aperture;
    let tip = ap.tip_s();
    let s_max = domain.s_max;
    let beta = ap.beta();

    let aspect = |s: f64| {
        let x = ((s - tip - 4.0 * PI) / (8.0 * PI)).clamp(0.0, 1.0);
        1.0 + (params.far_aspect - 1.0) * x
    };

    let mut breaks = params.breaks.clone();
    breaks.push(tip);

    let mut cm = CornerMesh::default();
    let mut columns: Vec<Vec<usize>> = Vec::new();
    let sharp_corner;

    if ap.theta() >= 30f64.to_radians() {
        // Vertical columns. The wedge near the outer corner is graded so that
        // only the corner triangle carries the corner angle.
        let tan_b = beta.tan();
        let wedge = (20f64.to_radians() + beta).tan().min(2.5);
        let step = |s: f64| {
            let height = (s * tan_b).min(PI);
            let mut d = h * aspect(s);
            if height < PI {
                let n = (height / h).ceil().max(1.0);
                d = d.min(height / n / wedge);
            }
            d
        };
        let first = h.min(tip);
        let mut xs = vec![0.0];
        xs.extend(march(first, s_max, &breaks, step, |s| if s < tip { 1.5 } else { 1.0 }));
        let corner = cm.push_vertex([0.0, 0.0]);
        sharp_corner = Some(corner);
        columns.push(vec![corner]);
        for &s in &xs[1..] {
            let top = [s, domain.height(s)];
            columns.push(column([s, 0.0], top, h, &mut cm));
        }
        for w in columns.windows(2) {
            cm.zip(&w[0], &w[1]);
            let (a, b) = (*w[0].last().unwrap(), *w[1].last().unwrap());
            let tag = if cm.verts[a][0] < tip - 1e-12 { BoundaryTag::Axis } else { BoundaryTag::WallInner };
            cm.edges.push(([a, b], tag));
            cm.edges.push(([w[0][0], w[1][0]], BoundaryTag::WallOuter));
        }
    } else {
        // Flat cones: ruled columns that start parallel to the axis and turn
        // vertical over a blending length.
        let blend = if s_max >= 3.0 * tip { 2.0 * tip } else { 0.5 * (tip + s_max) };
        let top_of = |b: f64| b + tip * (1.0 - b / blend).max(0.0);
        // tops advance by a factor `squeeze` of the bottom step inside the blend
        let squeeze = (1.0 - tip / blend).sqrt();
        let step = |s: f64| if s < blend { h * aspect(s) / squeeze } else { h * aspect(s) };
        let mut stop_breaks: Vec<f64> = breaks.iter().copied().filter(|&b| b >= blend).collect();
        stop_breaks.push(blend);
        let xs = march(0.0, s_max, &stop_breaks, step, |s| if s < blend { 1.5 } else { 1.0 });
        sharp_corner = if beta < MIN_ANGLE_DEG.to_radians() { Some(0) } else { None };
        for &b in &xs {
            columns.push(column([b, 0.0], [top_of(b), PI], h, &mut cm));
        }
        for w in columns[0].windows(2) {
            cm.edges.push(([w[0], w[1]], BoundaryTag::Axis));
        }
        for w in columns.windows(2) {
            cm.zip(&w[0], &w[1]);
            cm.edges.push(([*w[0].last().unwrap(), *w[1].last().unwrap()], BoundaryTag::WallInner));
            cm.edges.push(([w[0][0], w[1][0]], BoundaryTag::WallOuter));
        }
    }
    let last = columns.last().unwrap();
    for w in last.windows(2) {
        cm.edges.push(([w[0], w[1]], BoundaryTag::Truncation));
    }

    let tip_pt = [tip, PI];
    let h_tip = h / params.grading;
    // power-law grading towards the singular tip keeps the error O(h⁴)
    let graded = if params.grading > 1.0 {
        grade_towards(cm, tip_pt, |d| {
            if d >= TIP_ZONE {
                f64::INFINITY
            } else {
                h_tip + h * (d / TIP_ZONE).powf(TIP_GRADING_EXPONENT)
            }
        })?
    } else {
        cm
    };
    let mesh = graded.into_quadratic(sharp_corner);
    if mesh.quality.min_free_angle_deg < MIN_ANGLE_DEG {
        return Err(GeometryError::Quality {
            min_angle_deg: mesh.quality.min_free_angle_deg,
            required_deg: MIN_ANGLE_DEG,
        });
    }
    Ok(mesh)
}

/// Structured mesh of the rectangle `(0, a) × (0, b)` with `nx × ny` cells,
/// each split along alternating diagonals. Sides are tagged in the order
/// `[x = 0, y = 0, x = a, y = b]`.
pub fn rectangle_mesh(a: f64, b: f64, nx: usize, ny: usize, tags: [BoundaryTag; 4]) -> Mesh {
    let mut cm = CornerMesh::default();
    let id = |i: usize, j: usize| i * (ny + 1) + j;
    for i in 0..=nx {
        for j in 0..=ny {
            cm.push_vertex([a * i as f64 / nx as f64, b * j as f64 / ny as f64]);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                cm.push_tri(p00, p10, p11);
                cm.push_tri(p00, p11, p01);
            } else {
                cm.push_tri(p00, p10, p01);
                cm.push_tri(p10, p11, p01);
            }
        }
    }
    for j in 0..ny {
        cm.edges.push(([id(0, j), id(0, j + 1)], tags[0]));
        cm.edges.push(([id(nx, j), id(nx, j + 1)], tags[2]));
    }
    for i in 0..nx {
        cm.edges.push(([id(i, 0), id(i + 1, 0)], tags[1]));
        cm.edges.push(([id(i, ny), id(i + 1, ny)], tags[3]));
    }
    cm.into_quadratic(None)
}

/// Nested red refinement: each triangle is split into four.
pub fn refine_mesh(mesh: &Mesh) -> Mesh {
    let corner = mesh.corner_mesh();
    corner.red_refine().into_quadratic(mesh.sharp_corner.map(|_| 0))
}

impl Mesh {
    fn corner_mesh(&self) -> CornerMesh {
        // renumber corner vertices compactly, in first-seen order
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut cm = CornerMesh::default();
        let mut get = |cm: &mut CornerMesh, v: usize| {
            if map[v] == usize::MAX {
                map[v] = cm.push_vertex(self.nodes[v]);
            }
            map[v]
        };
        if let Some(c) = self.sharp_corner {
            get(&mut cm, c);
        }
        for t in &self.triangles {
            let tri = [get(&mut cm, t[0]), get(&mut cm, t[1]), get(&mut cm, t[2])];
            cm.tris.push(tri);
        }
        cm.edges = self.boundary.iter().map(|e| ([map[e.ends[0]], map[e.ends[1]]], e.tag)).collect();
        cm
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn corner_count(&self) -> usize {
        let mut seen = vec![false; self.nodes.len()];
        for t in &self.triangles {
            for &v in &t[..3] {
                seen[v] = true;
            }
        }
        seen.into_iter().filter(|&s| s).count()
    }

    pub fn triangle_corners(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = &self.triangles[t];
        [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let p = self.triangle_corners(t);
        0.5 * cross(sub(p[1], p[0]), sub(p[2], p[0]))
    }

    fn compute_quality(&self) -> MeshQuality {
        let mut q = MeshQuality { min_angle_deg: 180.0, min_free_angle_deg: 180.0, max_aspect: 0.0 };
        for (i, t) in self.triangles.iter().enumerate() {
            let p = self.triangle_corners(i);
            let angles = triangle_angles(p);
            for k in 0..3 {
                q.min_angle_deg = q.min_angle_deg.min(angles[k]);
                if Some(t[k]) != self.sharp_corner {
                    q.min_free_angle_deg = q.min_free_angle_deg.min(angles[k]);
                }
            }
            let longest = dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0]));
            let area = self.signed_area(i).abs();
            q.max_aspect = q.max_aspect.max(longest * longest / (2.0 * area));
        }
        q
    }

    /// Nodes lying on boundary edges carrying any of `tags`.
    pub fn nodes_on(&self, tags: &[BoundaryTag]) -> Vec<usize> {
        let mut on = vec![false; self.nodes.len()];
        for e in self.boundary.iter().filter(|e| tags.contains(&e.tag)) {
            on[e.ends[0]] = true;
            on[e.ends[1]] = true;
            on[e.mid] = true;
        }
        (0..self.nodes.len()).filter(|&i| on[i]).collect()
    }

    /// Checks conformity: interior edges are shared by two triangles, boundary
    /// edges by one and are tagged; triangles are positively oriented.
    pub fn check_conforming(&self) -> Result<(), GeometryError> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for (i, t) in self.triangles.iter().enumerate() {
            if self.signed_area(i) <= 0.0 {
                return Err(GeometryError::NonConforming(format!("triangle {i} is not positively oriented")));
            }
            for k in 0..3 {
                *count.entry(edge_key(t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut tagged: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.boundary {
            *tagged.entry(edge_key(e.ends[0], e.ends[1])).or_default() += 1;
        }
        for (e, &c) in &count {
            let t = tagged.get(e).copied().unwrap_or(0);
            match (c, t) {
                (2, 0) | (1, 1) => {}
                _ => {
                    return Err(GeometryError::NonConforming(format!(
                        "edge {e:?} has {c} triangles and {t} boundary tags"
                    )))
                }
            }
        }
        if tagged.len() != self.boundary.len() || tagged.keys().any(|e| !count.contains_key(e)) {
            return Err(GeometryError::NonConforming("dangling or duplicate boundary edge".into()));
        }
        Ok(())
    }

    /// Largest longest-edge among triangles within distance `radius` of `p`.
    pub fn local_edge_length(&self, p: [f64; 2], radius: f64) -> f64 {
        (0..self.triangles.len())
            .filter_map(|i| {
                let c = self.triangle_corners(i);
                (point_triangle_distance(p, c) <= radius)
                    .then(|| dist(c[0], c[1]).max(dist(c[1], c[2])).max(dist(c[2], c[0])))
            })
            .fold(0.0, f64::max)
    }

    /// Maps every node with `f`; used to transport a mesh between apertures.
    pub fn mapped(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Mesh {
        let mut out = self.clone();
        for p in out.nodes.iter_mut() {
            *p = f(*p);
        }
        out.quality = out.compute_quality();
        out
    }

    /// Writes the plain-text mesh format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("conelayer-mesh v1\n");
        out.push_str(&format!("{}\n", self.nodes.len()));
        for p in &self.nodes {
            out.push_str(&format!("{:.16e} {:.16e}\n", p[0], p[1]));
        }
        out.push_str(&format!("{}\n", self.triangles.len()));
        for t in &self.triangles {
            out.push_str(&format!("{} {} {} {} {} {}\n", t[0], t[1], t[2], t[3], t[4], t[5]));
        }
        out.push_str(&format!("{}\n", self.boundary.len()));
        for e in &self.boundary {
            out.push_str(&format!("{} {} {}\n", e.ends[0], e.ends[1], e.tag));
        }
        if let Some(c) = self.sharp_corner {
            out.push_str(&format!("sharp {c}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Mesh, GeometryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, msg: &str| GeometryError::Parse { line: line + 1, msg: msg.to_string() };
        let mut next = |what: &str| lines.next().ok_or_else(|| err(usize::MAX - 1, &format!("missing {what}")));
        let (ln, header) = next("header")?;
        if header.trim() != "conelayer-mesh v1" {
            return Err(err(ln, "bad header"));
        }
        fn count(ln: usize, l: &str) -> Result<usize, GeometryError> {
            l.trim().parse().map_err(|_| GeometryError::Parse { line: ln + 1, msg: "bad count".into() })
        }
        let (ln, l) = next("vertex count")?;
        let nv = count(ln, l)?;
        let mut nodes = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next("vertex")?;
            let v: Vec<f64> = l.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| err(ln, "bad float"))?;
            if v.len() != 2 {
                return Err(err(ln, "expected two coordinates"));
            }
            nodes.push([v[0], v[1]]);
        }
        let (ln, l) = next("triangle count")?;
        let nt = count(ln, l)?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (ln, l) = next("triangle")?;
            let v: Vec<usize> = l.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| err(ln, "bad index"))?;
            if v.len() != 6 || v.iter().any(|&i| i >= nv) {
                return Err(err(ln, "expected six valid node indices"));
            }
            triangles.push([v[0], v[1], v[2], v[3], v[4], v[5]]);
        }
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                mids.insert(edge_key(t[k], t[(k + 1) % 3]), t[3 + k]);
            }
        }
        let (ln, l) = next("boundary count")?;
        let nb = count(ln, l)?;
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (ln, l) = next("boundary edge")?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err(ln, "expected `n1 n2 TAG`"));
            }
            let a: usize = parts[0].parse().map_err(|_| err(ln, "bad index"))?;
            let b: usize = parts[1].parse().map_err(|_| err(ln, "bad index"))?;
            let tag: BoundaryTag = parts[2].parse().map_err(|m: String| err(ln, &m))?;
            let mid = *mids.get(&edge_key(a, b)).ok_or_else(|| err(ln, "boundary edge is not a mesh edge"))?;
            boundary.push(BoundaryEdge { ends: [a, b], mid, tag });
        }
        let sharp_corner = match lines.next() {
            None => None,
            Some((ln, l)) => match l.trim().strip_prefix("sharp ").map(|v| v.trim().parse::<usize>()) {
                Some(Ok(c)) if c < nv => Some(c),
                _ => return Err(err(ln, "expected `sharp <node>` or end of file")),
            },
        };
        let mut mesh = Mesh { nodes, triangles, boundary, quality: MeshQuality::default(), sharp_corner };
        mesh.quality = mesh.compute_quality();
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ap(deg: f64) -> Aperture {
        Aperture::from_theta_deg(deg).unwrap()
    }

    #[test]
    fn aperture_conventions() {
        let a = Aperture::from_beta_deg(2.5).unwrap();
        assert!((a.theta() - 87.5f64.to_radians()).abs() < 1e-15);
        assert_eq!(a.beta(), 2.5f64.to_radians());
        assert!(Aperture::from_theta(0.0).is_err());
        assert!(Aperture::from_theta(FRAC_PI_2).is_err());
        assert!(Aperture::from_theta(f64::NAN).is_err());
    }

    #[test]
    fn domain_at_45_degrees() {
        let d = build_domain(ap(45.0), 10.0).unwrap();
        assert!((d.tip_su().x - PI).abs() < 1e-14);
        let tip = d.tip_rz();
        assert_eq!(tip.x, 0.0);
        assert!((tip.y - PI * 2f64.sqrt()).abs() < 1e-13);
        // axis piece u = s
        assert!((d.height(1.3) - 1.3).abs() < 1e-14);
    }

    #[test]
    fn sharp_cone_tip_height() {
        let d = build_domain(Aperture::from_beta_deg(2.5).unwrap(), 300.0).unwrap();
        let z = d.tip_rz().y;
        assert!((z - PI / 2.5f64.to_radians().sin()).abs() < 1e-10);
        assert!((z - 72.0).abs() < 0.05, "{z}");
    }

    #[test]
    fn truncation_at_tip_rejected() {
        let a = ap(80.0);
        let err = build_domain(a, PI * 80f64.to_radians().tan()).unwrap_err();
        assert!(matches!(err, GeometryError::TruncationAtTip { .. }));
    }

    #[test]
    fn axis_maps_to_r_zero() {
        for deg in [10.0, 45.0, 80.0] {
            let a = ap(deg);
            for s in [0.3, 1.0, 2.5] {
                let p = Point2::new(s, s / a.theta().tan());
                let rz = map_point(p, Chart::SU, Chart::RZ, &a);
                assert!(rz.x.abs() < 1e-14);
                assert!(weight_r(p, &a).abs() < 1e-14);
            }
            let rz = map_point(Point2::new(a.tip_s(), PI), Chart::SU, Chart::RZ, &a);
            assert!(rz.x.abs() < 1e-12);
            assert!((rz.y - PI / a.theta().cos()).abs() < 1e-12 * rz.y);
        }
    }

    #[test]
    fn weight_on_outer_wall() {
        let a = ap(30.0);
        assert!((weight_r(Point2::new(2.0, 0.0), &a) - 2.0 * a.theta().cos()).abs() < 1e-15);
    }

    #[test]
    fn structural_mesh_tags() {
        let d = build_domain(ap(45.0), 20.0).unwrap();
        let m = generate_mesh(&d, 0.2, 4.0).unwrap();
        m.check_conforming().unwrap();
        for tag in BoundaryTag::ALL {
            assert!(m.boundary.iter().any(|e| e.tag == tag), "missing {tag}");
        }
        assert!(m.quality.min_free_angle_deg >= MIN_ANGLE_DEG);
    }

    #[test]
    fn tip_grading_respected() {
        let d = build_domain(ap(60.0), 15.0).unwrap();
        let m = generate_mesh(&d, 0.4, 4.0).unwrap();
        let tip = d.tip_su();
        let near = m.local_edge_length([tip.x, tip.y], 1e-9);
        assert!(near <= 0.1 + 1e-12, "{near}");
    }

    #[test]
    fn flat_cone_mesh() {
        let d = build_domain(ap(5.0), 30.0).unwrap();
        let m = generate_mesh(&d, 0.3, 4.0).unwrap();
        m.check_conforming().unwrap();
        assert!(m.boundary.iter().any(|e| e.tag == BoundaryTag::Axis));
    }

    #[test]
    fn sharp_cone_mesh_quality() {
        let d = build_domain(Aperture::from_beta_deg(2.5).unwrap(), 120.0).unwrap();
        let m = generate_mesh(&d, 0.3, 16.0).unwrap();
        m.check_conforming().unwrap();
        // only the corner at the origin is sharper than the threshold
        assert!(m.quality.min_angle_deg < MIN_ANGLE_DEG);
        assert!(m.quality.min_free_angle_deg >= MIN_ANGLE_DEG);
    }

    #[test]
    fn red_refinement_quadruples() {
        let d = build_domain(ap(50.0), 8.0).unwrap();
        let m = generate_mesh(&d, 0.5, 2.0).unwrap();
        let r = refine_mesh(&m);
        assert_eq!(r.triangles.len(), 4 * m.triangles.len());
        assert_eq!(r.boundary.len(), 2 * m.boundary.len());
        r.check_conforming().unwrap();
        for tag in BoundaryTag::ALL {
            let c = m.boundary.iter().filter(|e| e.tag == tag).count();
            assert_eq!(r.boundary.iter().filter(|e| e.tag == tag).count(), 2 * c);
        }
        // coarse nodes survive at their positions
        for p in &m.nodes {
            assert!(r.nodes.contains(p));
        }
    }

    #[test]
    fn breaks_are_columns_and_prefix_is_shared() {
        let a = ap(70.0);
        let short = build_domain(a, 20.0).unwrap();
        let long = build_domain(a, 40.0).unwrap();
        let p_short = MeshParams::new(0.5, 2.0);
        let p_long = MeshParams::new(0.5, 2.0).with_breaks(&[20.0]);
        let ms = generate_mesh_with(&short, &p_short).unwrap();
        let ml = generate_mesh_with(&long, &p_long).unwrap();
        for p in &ms.nodes {
            assert!(ml.nodes.contains(p), "node {p:?} missing from the longer mesh");
        }
    }

    #[test]
    fn text_format_round_trip() {
        let d = build_domain(ap(45.0), 6.0).unwrap();
        let m = generate_mesh(&d, 0.6, 2.0).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("conelayer-mesh v1\n"));
        let back = Mesh::from_text(&text).unwrap();
        assert_eq!(back.nodes, m.nodes);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.boundary, m.boundary);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = Mesh::from_text("conelayer-mesh v1\n1\n0.0 nope\n").unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 3, .. }));
        assert!(Mesh::from_text("something else").is_err());
    }
}
