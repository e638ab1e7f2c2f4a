use std::fmt::Write;

use crate::analysis::{NodalData, ProfileReport, SweepResult};
use crate::geometry::{map_point, Aperture, Chart, Mesh, Point2};
use crate::oracles::lambda0;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Minimal self-contained SVG document builder.
#[derive(Debug, Clone)]
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg { width, height, body: String::new() }
    }

    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], stroke: &str, width: f64, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="{width}"/>"#,
            a[0], a[1], b[0], b[1]
        );
    }

    /// One path made of several open polylines.
    pub fn path(&mut self, pieces: &[Vec<[f64; 2]>], stroke: &str, width: f64, class: &str) {
        let mut d = String::new();
        for piece in pieces.iter().filter(|p| p.len() >= 2) {
            for (i, p) in piece.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, p[0], p[1]);
            }
        }
        if d.is_empty() {
            return;
        }
        let _ = writeln!(
            self.body,
            r#"<path class="{class}" d="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            d.trim_end()
        );
    }

    pub fn circle(&mut self, c: [f64; 2], r: f64, fill: &str, class: &str) {
        let _ = writeln!(self.body, r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="{r}" fill="{fill}"/>"#, c[0], c[1]);
    }

    pub fn text(&mut self, at: [f64; 2], size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            at[0],
            at[1],
            esc(s)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Data-to-pixel map of a plot area.
struct Frame {
    x: [f64; 2],
    y: [f64; 2],
    left: f64,
    top: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.left + (x - self.x[0]) / (self.x[1] - self.x[0]) * self.w,
            self.top + self.h - (y - self.y[0]) / (self.y[1] - self.y[0]) * self.h,
        ]
    }

    fn axes(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        let (x0, y0) = (self.left, self.top + self.h);
        svg.line([x0, y0], [x0 + self.w, y0], "black", 1.0, "axis");
        svg.line([x0, y0], [x0, self.top], "black", 1.0, "axis");
        for t in ticks(self.x[0], self.x[1]) {
            let p = self.map(t, self.y[0]);
            svg.line(p, [p[0], p[1] + 5.0], "black", 1.0, "tick");
            svg.text([p[0], p[1] + 18.0], 11.0, "middle", &tick_label(t));
        }
        for t in ticks(self.y[0], self.y[1]) {
            let p = self.map(self.x[0], t);
            svg.line(p, [p[0] - 5.0, p[1]], "black", 1.0, "tick");
            svg.text([p[0] - 8.0, p[1] + 4.0], 11.0, "end", &tick_label(t));
        }
        svg.text([x0 + 0.5 * self.w, y0 + 36.0], 13.0, "middle", xlabel);
        svg.text([x0 - 50.0, self.top - 10.0], 13.0, "start", ylabel);
    }
}

fn ticks(a: f64, b: f64) -> Vec<f64> {
    let span = b - a;
    if !(span > 0.0) {
        return vec![a];
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let start = (a / step).ceil() as i64;
    let end = (b / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn tick_label(t: f64) -> String {
    let s = format!("{:.6}", t);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Eigenvalue branches against the angle, with the threshold line at 1 and
/// a dot at `λ₀` on the sharp-cone end of the axis.
pub fn sweep_svg(result: &SweepResult, beta_axis: bool) -> String {
    let angle = |o: &crate::analysis::AngleOutcome| if beta_axis { o.beta.to_degrees() } else { o.theta.to_degrees() };
    let ok: Vec<_> = result.outcomes.iter().filter(|o| o.succeeded()).collect();
    let l0 = lambda0();
    let sharp_end = if beta_axis { 0.0 } else { 90.0 };
    let mut xs: Vec<f64> = ok.iter().map(|o| angle(o)).collect();
    xs.push(sharp_end);
    let (mut xmin, mut xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if xmax - xmin < 1e-9 {
        xmin -= 1.0;
        xmax += 1.0;
    }
    let ymin = ok.iter().flat_map(|o| o.eigenvalues.iter().copied()).fold(l0, f64::min) - 0.02;
    let frame = Frame { x: [xmin, xmax], y: [ymin, 1.02], left: 80.0, top: 40.0, w: 640.0, h: 420.0 };
    let mut svg = Svg::new(780.0, 520.0);
    frame.axes(&mut svg, if beta_axis { "β (degrees)" } else { "θ (degrees)" }, "λ");
    svg.line(frame.map(xmin, 1.0), frame.map(xmax, 1.0), "gray", 1.0, "threshold");
    for j in 0..result.j_max {
        let pts: Vec<[f64; 2]> =
            ok.iter().filter_map(|o| o.eigenvalues.get(j).map(|&l| frame.map(angle(o), l))).collect();
        let color = PALETTE[j % PALETTE.len()];
        svg.path(&[pts.clone()], color, 1.5, "branch");
        for p in pts {
            svg.circle(p, 2.5, color, "sample");
        }
    }
    svg.circle(frame.map(sharp_end, l0), 6.0, "black", "lambda0");
    svg.text(frame.map(sharp_end, l0 - 0.015), 12.0, "start", "λ₀");
    svg.finish()
}

fn to_rz(ap: &Aperture, p: [f64; 2]) -> [f64; 2] {
    let q = map_point(Point2::new(p[0], p[1]), Chart::SU, Chart::RZ, ap);
    [q.x, q.y]
}

/// Contours of a mode over the meridian half-plane, `z` horizontal and `r`
/// vertical stretched by `vertical_scale`. Nodal lines are black paths of
/// class `nodal`, one per connected line.
pub fn mode_svg(
    mesh: &Mesh,
    nodal_values: &[f64],
    nodal: &NodalData,
    aperture: &Aperture,
    vertical_scale: f64,
    levels: usize,
    title: &str,
) -> String {
    let rz: Vec<[f64; 2]> = mesh.nodes.iter().map(|&p| to_rz(aperture, p)).collect();
    let (mut zmax, mut rmax) = (0.0f64, 0.0f64);
    for p in &rz {
        rmax = rmax.max(p[0]);
        zmax = zmax.max(p[1]);
    }
    let w = 1400.0;
    let scale = w / zmax.max(1e-9);
    let h = (rmax * vertical_scale * scale).max(40.0);
    let frame = Frame { x: [0.0, zmax], y: [0.0, rmax], left: 70.0, top: 40.0, w, h };
    let mut svg = Svg::new(w + 110.0, h + 100.0);
    frame.axes(&mut svg, "z", "r");
    svg.text([frame.left + 0.5 * w, 24.0], 14.0, "middle", title);
    let map = |p: [f64; 2]| frame.map(p[1], p[0]);

    let outline: Vec<Vec<[f64; 2]>> =
        mesh.boundary.iter().map(|e| vec![map(rz[e.ends[0]]), map(rz[e.ends[1]])]).collect();
    svg.path(&outline, "#555555", 0.8, "outline");

    let vmax = nodal_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 1..=levels {
        for sign in [1.0, -1.0] {
            let level = sign * vmax * i as f64 / (levels + 1) as f64;
            let mut pieces = Vec::new();
            for t in &mesh.triangles {
                let c = [t[0], t[1], t[2]];
                let v = c.map(|k| nodal_values[k] - level);
                let mut pts = Vec::new();
                for e in 0..3 {
                    let (a, b) = (e, (e + 1) % 3);
                    if (v[a] > 0.0) != (v[b] > 0.0) {
                        let s = v[a] / (v[a] - v[b]);
                        let (pa, pb) = (rz[c[a]], rz[c[b]]);
                        pts.push(map([pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]));
                    }
                }
                if pts.len() == 2 {
                    pieces.push(pts);
                }
            }
            let color = if sign > 0.0 { "#d62728" } else { "#1f77b4" };
            svg.path(&pieces, color, 0.6, "contour");
        }
    }

    for line in 0..nodal.nodal_lines {
        let pieces: Vec<Vec<[f64; 2]>> = nodal
            .polylines
            .iter()
            .zip(&nodal.line_of)
            .filter(|(_, &l)| l == line)
            .map(|(pl, _)| pl.iter().map(|&p| map(to_rz(aperture, p))).collect())
            .collect();
        svg.path(&pieces, "black", 1.6, "nodal");
    }
    svg.finish()
}

/// Overlaid `|ψ_j|²` envelopes along `z` under one normalization.
pub fn profiles_svg(profiles: &[(usize, ProfileReport)]) -> String {
    let zmax = profiles.iter().flat_map(|(_, p)| p.z.last().copied()).fold(1e-9, f64::max);
    let ymax = profiles.iter().flat_map(|(_, p)| p.envelope.iter().copied()).fold(1e-300, f64::max);
    let frame = Frame { x: [0.0, zmax], y: [0.0, 1.05 * ymax], left: 90.0, top: 40.0, w: 900.0, h: 360.0 };
    let mut svg = Svg::new(1080.0, 460.0);
    frame.axes(&mut svg, "z", "max |ψ|²");
    for (i, (j, p)) in profiles.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<[f64; 2]> = p.z.iter().zip(&p.envelope).map(|(&z, &e)| frame.map(z, e)).collect();
        svg.path(&[pts], color, 1.4, "profile");
        let at = [frame.left + frame.w + 10.0, frame.top + 16.0 * (i as f64 + 1.0)];
        svg.line([at[0], at[1] - 4.0], [at[0] + 14.0, at[1] - 4.0], color, 2.0, "legend");
        svg.text([at[0] + 18.0, at[1]], 11.0, "start", &format!("j = {j}"));
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::AngleOutcome;

    fn outcome(beta_deg: f64, vals: Vec<f64>) -> AngleOutcome {
        let b = beta_deg.to_radians();
        AngleOutcome {
            theta: std::f64::consts::FRAC_PI_2 - b,
            beta: b,
            error_estimate: vec![0.0; vals.len()],
            converged: vec![true; vals.len()],
            residuals: vec![0.0; vals.len()],
            eigenvalues: vals,
            s_max: 100.0,
            ndof: 10,
            truncation_converged: true,
            error: None,
        }
    }

    #[test]
    fn ticks_are_nice() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(tick_label(0.30000000000000004), "0.3");
    }

    #[test]
    fn sweep_plot_has_threshold_and_dot() {
        let r = SweepResult { j_max: 2, outcomes: vec![outcome(2.0, vec![0.7, 0.9]), outcome(4.0, vec![0.75, 0.95])] };
        let s = sweep_svg(&r, true);
        assert!(s.starts_with("<?xml"));
        assert_eq!(s.matches("class=\"threshold\"").count(), 1);
        assert_eq!(s.matches("class=\"lambda0\"").count(), 1);
        assert_eq!(s.matches("class=\"branch\"").count(), 2);
        assert!(!s.contains("href"));
        let one = SweepResult { j_max: 1, outcomes: vec![outcome(3.0, vec![0.8])] };
        assert!(sweep_svg(&one, false).contains("class=\"sample\""));
    }

    #[test]
    fn escapes_text() {
        let mut s = Svg::new(10.0, 10.0);
        s.text([0.0, 0.0], 10.0, "start", "a<b & c");
        assert!(s.finish().contains("a&lt;b &amp; c"));
    }
}
