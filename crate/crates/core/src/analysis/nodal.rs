use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::assembly::{p2_values, AssembledSystem, ElementGeometry, QuadratureRule};
use crate::geometry::{map_point, weight_r, Aperture, Chart, Mesh, Point2};

/// Sub-intervals per element edge; each element splits into `SUBDIVISION²`
/// affine sub-triangles.
pub const SUBDIVISION: usize = 4;
/// Lattice values below this fraction of `max |ψ|` count as zero.
const ZERO_FRACTION: f64 = 1e-8;
const ZERO_FIELD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalData {
    /// Zero level set in `SU` coordinates.
    pub polylines: Vec<Vec<[f64; 2]>>,
    /// Nodal line (connected component) each polyline belongs to.
    pub line_of: Vec<usize>,
    pub sign_domains: usize,
    /// Connected components of the zero level set.
    pub nodal_lines: usize,
    /// Values of `s` where the zero set meets `u = π/2`, ascending.
    pub midline_crossings: Vec<f64>,
    pub max_abs: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum LatticeKey {
    Vertex(usize),
    Edge(usize, usize, usize),
    Interior(usize, usize, usize),
}

fn lattice_key(tri: &[usize; 6], t: usize, c: [usize; 3]) -> LatticeKey {
    let nz: Vec<usize> = (0..3).filter(|&i| c[i] != 0).collect();
    match nz.len() {
        1 => LatticeKey::Vertex(tri[nz[0]]),
        2 => {
            let (a, b) = (nz[0], nz[1]);
            if tri[a] < tri[b] {
                LatticeKey::Edge(tri[a], tri[b], c[a])
            } else {
                LatticeKey::Edge(tri[b], tri[a], c[b])
            }
        }
        _ => LatticeKey::Interior(t, c[0], c[1]),
    }
}

struct Lattice {
    points: Vec<[f64; 2]>,
    values: Vec<f64>,
    /// Sub-triangles as indices into `points`.
    triangles: Vec<[usize; 3]>,
}

fn build_lattice(mesh: &Mesh, nodal: &[f64]) -> Result<Lattice, AnalysisError> {
    let n = SUBDIVISION;
    let mut index: HashMap<LatticeKey, usize> = HashMap::new();
    let mut lat = Lattice { points: Vec::new(), values: Vec::new(), triangles: Vec::new() };
    let mut local = vec![0usize; (n + 1) * (n + 1)];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let geo = ElementGeometry::new(mesh.triangle_corners(t)).ok_or(crate::assembly::AssemblyError::Degenerate(t))?;
        let v = tri.map(|k| nodal[k]);
        for a in 0..=n {
            for b in 0..=n - a {
                let c = [a, b, n - a - b];
                let key = lattice_key(tri, t, c);
                let id = *index.entry(key).or_insert_with(|| {
                    let l = c.map(|x| x as f64 / n as f64);
                    let phi = p2_values(l);
                    lat.points.push(geo.point(l));
                    lat.values.push((0..6).map(|k| v[k] * phi[k]).sum());
                    lat.points.len() - 1
                });
                local[a * (n + 1) + b] = id;
            }
        }
        let at = |a: usize, b: usize| local[a * (n + 1) + b];
        for a in 0..n {
            for b in 0..n - a {
                lat.triangles.push([at(a, b), at(a + 1, b), at(a, b + 1)]);
                if a + b + 2 <= n {
                    lat.triangles.push([at(a + 1, b), at(a + 1, b + 1), at(a, b + 1)]);
                }
            }
        }
    }
    Ok(lat)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum ZeroPoint {
    Vertex(usize),
    Edge(usize, usize),
}

/// Nodal data of an eigenvector given on the free dofs of `system`.
pub fn nodal_extract(mesh: &Mesh, system: &AssembledSystem, eigenvector: &[f64]) -> Result<NodalData, AnalysisError> {
    nodal_extract_field(mesh, &system.to_nodal(eigenvector))
}

/// Nodal data of a quadratic field given by its values at all mesh nodes.
pub fn nodal_extract_field(mesh: &Mesh, nodal: &[f64]) -> Result<NodalData, AnalysisError> {
    let max_abs = nodal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(max_abs >= ZERO_FIELD) {
        return Err(AnalysisError::ZeroField(max_abs));
    }
    let lat = build_lattice(mesh, nodal)?;
    let eps = ZERO_FRACTION * max_abs;
    let zero_id = |z: ZeroPoint, ids: &mut HashMap<ZeroPoint, usize>, pts: &mut Vec<[f64; 2]>| {
        *ids.entry(z).or_insert_with(|| {
            pts.push(match z {
                ZeroPoint::Vertex(a) => lat.points[a],
                ZeroPoint::Edge(a, b) => {
                    let (va, vb) = (lat.values[a], lat.values[b]);
                    let t = va / (va - vb);
                    let (pa, pb) = (lat.points[a], lat.points[b]);
                    [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
                }
            });
            pts.len() - 1
        })
    };
    let sign: Vec<i8> = lat.values.iter().map(|&v| if v > eps { 1 } else if v < -eps { -1 } else { 0 }).collect();

    let mut domains = UnionFind::new(lat.points.len());
    let mut zero_ids: HashMap<ZeroPoint, usize> = HashMap::new();
    let mut zero_pts: Vec<[f64; 2]> = Vec::new();
    let mut segments: Vec<[usize; 2]> = Vec::new();
    // lattice edges with both ends zero, with the signs seen across them
    let mut zero_edges: HashMap<(usize, usize), Vec<i8>> = HashMap::new();
    for tri in &lat.triangles {
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            if sign[a] != 0 && sign[a] == sign[b] {
                domains.union(a, b);
            }
        }
        for e in 0..3 {
            let (a, b, c) = (tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]);
            if sign[a] == 0 && sign[b] == 0 && sign[c] != 0 {
                zero_edges.entry((a.min(b), a.max(b))).or_default().push(sign[c]);
            }
        }
        let has_pos = tri.iter().any(|&i| sign[i] > 0);
        let has_neg = tri.iter().any(|&i| sign[i] < 0);
        if !(has_pos && has_neg) {
            continue;
        }
        let mut ends = Vec::with_capacity(3);
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            if sign[a] == 0 {
                ends.push(ZeroPoint::Vertex(a));
            } else if sign[a] * sign[b] < 0 {
                ends.push(ZeroPoint::Edge(a.min(b), a.max(b)));
            }
        }
        if ends.len() != 2 {
            continue;
        }
        let ids = [ends[0], ends[1]].map(|z| zero_id(z, &mut zero_ids, &mut zero_pts));
        segments.push(ids);
    }
    let mut separating: Vec<(usize, usize)> =
        zero_edges.into_iter().filter(|(_, s)| s.contains(&1) && s.contains(&-1)).map(|(e, _)| e).collect();
    separating.sort_unstable();
    for (a, b) in separating {
        segments.push([ZeroPoint::Vertex(a), ZeroPoint::Vertex(b)].map(|z| zero_id(z, &mut zero_ids, &mut zero_pts)));
    }

    let mut roots: Vec<usize> = (0..lat.points.len()).filter(|&i| sign[i] != 0).map(|i| domains.find(i)).collect();
    roots.sort_unstable();
    roots.dedup();

    let mut lines = UnionFind::new(zero_pts.len());
    for s in &segments {
        lines.union(s[0], s[1]);
    }
    let mut line_roots: Vec<usize> = segments.iter().map(|s| lines.find(s[0])).collect();
    line_roots.sort_unstable();
    line_roots.dedup();

    let mut midline_crossings: Vec<f64> = segments
        .iter()
        .filter_map(|s| {
            let (p, q) = (zero_pts[s[0]], zero_pts[s[1]]);
            if (p[1] < FRAC_PI_2) == (q[1] < FRAC_PI_2) {
                return None;
            }
            let t = (FRAC_PI_2 - p[1]) / (q[1] - p[1]);
            Some(p[0] + t * (q[0] - p[0]))
        })
        .collect();
    midline_crossings.sort_by(f64::total_cmp);

    let (polylines, starts) = chain(&segments, &zero_pts);
    let line_of = starts.iter().map(|&p| line_roots.binary_search(&lines.find(p)).expect("root of a segment")).collect();
    Ok(NodalData {
        polylines,
        line_of,
        sign_domains: roots.len(),
        nodal_lines: line_roots.len(),
        midline_crossings,
        max_abs,
    })
}

/// Joins segments sharing endpoints into polylines; also returns the first
/// point index of each.
fn chain(segments: &[[usize; 2]], points: &[[f64; 2]]) -> (Vec<Vec<[f64; 2]>>, Vec<usize>) {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    for (k, s) in segments.iter().enumerate() {
        adj[s[0]].push(k);
        adj[s[1]].push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let mut first = Vec::new();
    // open chains start at points of odd degree, closed loops anywhere
    let starts: Vec<usize> = (0..points.len())
        .filter(|&p| adj[p].len() % 2 == 1)
        .chain((0..points.len()).filter(|&p| !adj[p].is_empty()))
        .collect();
    for start in starts {
        while let Some(&k) = adj[start].iter().find(|&&k| !used[k]) {
            let mut line = vec![points[start]];
            let (mut at, mut seg) = (start, k);
            loop {
                used[seg] = true;
                let s = segments[seg];
                at = if s[0] == at { s[1] } else { s[0] };
                line.push(points[at]);
                match adj[at].iter().find(|&&k| !used[k]) {
                    Some(&next) => seg = next,
                    None => break,
                }
            }
            out.push(line);
            first.push(start);
        }
    }
    (out, first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingReport {
    /// Mid-line node positions, ascending in `s`.
    pub positions: Vec<f64>,
    /// Consecutive differences of `positions`.
    pub spacings: Vec<f64>,
    /// Distance of each spacing's midpoint from the tip.
    pub distances: Vec<f64>,
    /// Ratios of consecutive spacings.
    pub ratios: Vec<f64>,
    /// Spacings grow strictly with the distance of their midpoint from the tip.
    pub strictly_increasing: bool,
}

/// Consecutive distances between the mid-line nodes, judged against the
/// distance from the inner tip at `s = tip_s` on either side of it.
pub fn node_spacing_report(nodal: &NodalData, tip_s: f64) -> SpacingReport {
    let positions = nodal.midline_crossings.clone();
    let spacings: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let distances: Vec<f64> = positions.windows(2).map(|w| (0.5 * (w[0] + w[1]) - tip_s).abs()).collect();
    let ratios: Vec<f64> = spacings.windows(2).map(|w| w[1] / w[0]).collect();
    let mut order: Vec<usize> = (0..spacings.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let strictly_increasing = order.windows(2).all(|w| spacings[w[1]] > spacings[w[0]]);
    SpacingReport { positions, spacings, distances, ratios, strictly_increasing }
}

/// Envelope of `|ψ|²` over transverse sections along the axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    /// Bin centres in `z`.
    pub z: Vec<f64>,
    /// Largest `|ψ|²` sampled in each bin.
    pub envelope: Vec<f64>,
    /// Positions of local maxima above 1 % of the peak, ascending.
    pub maxima: Vec<f64>,
}

impl ProfileReport {
    pub fn farthest_maximum(&self) -> Option<f64> {
        self.maxima.last().copied()
    }
}

/// `|ψ|²` envelope of an eigenvector on `bins` uniform bins of `[0, z_max]`.
pub fn profile_report(
    mesh: &Mesh,
    system: &AssembledSystem,
    aperture: &Aperture,
    eigenvector: &[f64],
    z_max: f64,
    bins: usize,
) -> Result<ProfileReport, AnalysisError> {
    profile_report_field(mesh, aperture, &system.to_nodal(eigenvector), z_max, bins)
}

pub fn profile_report_field(
    mesh: &Mesh,
    aperture: &Aperture,
    nodal: &[f64],
    z_max: f64,
    bins: usize,
) -> Result<ProfileReport, AnalysisError> {
    if bins == 0 || !(z_max > 0.0) {
        return Err(AnalysisError::BadParameter(format!("profile grid {bins} bins on [0, {z_max}]")));
    }
    let lat = build_lattice(mesh, nodal)?;
    let width = z_max / bins as f64;
    let mut envelope = vec![0.0f64; bins];
    for (p, v) in lat.points.iter().zip(&lat.values) {
        let z = map_point(Point2::new(p[0], p[1]), Chart::SU, Chart::RZ, aperture).y;
        if z < 0.0 || z > z_max {
            continue;
        }
        let b = ((z / width) as usize).min(bins - 1);
        envelope[b] = envelope[b].max(v * v);
    }
    let z: Vec<f64> = (0..bins).map(|b| (b as f64 + 0.5) * width).collect();
    let peak = envelope.iter().copied().fold(0.0, f64::max);
    let mut maxima = Vec::new();
    for b in 0..bins {
        let left = if b > 0 { envelope[b - 1] } else { 0.0 };
        let right = if b + 1 < bins { envelope[b + 1] } else { 0.0 };
        if envelope[b] > 0.01 * peak && envelope[b] > left && envelope[b] >= right {
            maxima.push(z[b]);
        }
    }
    Ok(ProfileReport { z, envelope, maxima })
}

/// Fraction of `∫ r ψ²` carried by the part of the domain with `z ≤ z_cut`.
pub fn extent_fraction(
    mesh: &Mesh,
    system: &AssembledSystem,
    aperture: &Aperture,
    eigenvector: &[f64],
    z_cut: f64,
) -> Result<f64, AnalysisError> {
    let nodal = system.to_nodal(eigenvector);
    let rule = QuadratureRule::degree5();
    let n = SUBDIVISION as f64;
    let (mut inside, mut total) = (0.0, 0.0);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let geo = ElementGeometry::new(mesh.triangle_corners(t)).ok_or(crate::assembly::AssemblyError::Degenerate(t))?;
        let v = tri.map(|k| nodal[k]);
        let z_of = |l: [f64; 3]| {
            let p = geo.point(l);
            map_point(Point2::new(p[0], p[1]), Chart::SU, Chart::RZ, aperture).y
        };
        let zs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].map(z_of);
        let split = zs.iter().any(|&z| z <= z_cut) && zs.iter().any(|&z| z > z_cut);
        // straddling elements are integrated on the sub-triangle lattice
        let subs: Vec<[[f64; 3]; 3]> = if split {
            let s = SUBDIVISION;
            let at = |a: usize, b: usize| [a as f64 / n, b as f64 / n, (s - a - b) as f64 / n];
            let mut v = Vec::new();
            for a in 0..s {
                for b in 0..s - a {
                    v.push([at(a, b), at(a + 1, b), at(a, b + 1)]);
                    if a + b + 2 <= s {
                        v.push([at(a + 1, b), at(a + 1, b + 1), at(a, b + 1)]);
                    }
                }
            }
            v
        } else {
            vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]]
        };
        let frac = 1.0 / subs.len() as f64;
        for sub in subs {
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let l = [0, 1, 2].map(|i| q[0] * sub[0][i] + q[1] * sub[1][i] + q[2] * sub[2][i]);
                let phi = p2_values(l);
                let psi: f64 = (0..6).map(|k| v[k] * phi[k]).sum();
                let p = geo.point(l);
                let r = weight_r(Point2::new(p[0], p[1]), aperture);
                let contrib = 2.0 * geo.area * frac * w * r * psi * psi;
                total += contrib;
                if z_of(l) <= z_cut {
                    inside += contrib;
                }
            }
        }
    }
    Ok(inside / total)
}
