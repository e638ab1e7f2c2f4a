use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::geometry::Aperture;
use crate::oracles::lambda0;

/// Inscribed-cylinder lower bound on the number of eigenvalues below
/// `lambda_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderBound {
    pub theta: f64,
    pub lambda_bar: f64,
    pub radius: f64,
    pub length: f64,
    /// `(L/π) √(λ̄ - λ₀π²/R²)` at the reported radius.
    pub score: f64,
    pub n: usize,
}

impl CylinderBound {
    /// `λ₀ (π/R)² + (πN/L)²`, below `lambda_bar` whenever `n ≥ 1`.
    pub fn top_eigenvalue(&self) -> f64 {
        lambda0() * (PI / self.radius).powi(2) + (PI * self.n as f64 / self.length).powi(2)
    }
}

/// Length of the longest axial cylinder of radius `r` with one lid at the
/// inner tip that fits in the layer.
pub fn cylinder_length(aperture: &Aperture, r: f64) -> f64 {
    let (sin, cos) = aperture.theta().sin_cos();
    (PI - r * sin) / cos
}

fn score(aperture: &Aperture, lambda_bar: f64, r: f64) -> f64 {
    let rad = lambda_bar - lambda0() * (PI / r).powi(2);
    let l = cylinder_length(aperture, r);
    if rad <= 0.0 || l <= 0.0 {
        return 0.0;
    }
    l / PI * rad.sqrt()
}

/// Maximizes the cylinder count over `R ∈ (0, π)`. The score is unimodal
/// in `R`; a coarse scan brackets the maximum and golden section refines it.
pub fn cylinder_count_bound(aperture: &Aperture, lambda_bar: f64) -> Result<CylinderBound, AnalysisError> {
    let l0 = lambda0();
    if !(lambda_bar > l0 && lambda_bar < 1.0) {
        return Err(AnalysisError::BadParameter(format!("lambda_bar = {lambda_bar} outside ({l0}, 1)")));
    }
    let f = |r: f64| score(aperture, lambda_bar, r);
    let lo = PI * (l0 / lambda_bar).sqrt();
    let hi = PI;
    const SCAN: usize = 256;
    let step = (hi - lo) / SCAN as f64;
    let best = (1..SCAN).max_by(|&a, &b| f(lo + a as f64 * step).total_cmp(&f(lo + b as f64 * step))).unwrap_or(1);
    let (mut a, mut b) = (lo + (best - 1) as f64 * step, (lo + (best + 1) as f64 * step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-13 * hi {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let radius = 0.5 * (a + b);
    let s = f(radius);
    // largest integer strictly below the score
    let n = if s > 0.0 { s.ceil() as usize - 1 } else { 0 };
    Ok(CylinderBound {
        theta: aperture.theta(),
        lambda_bar,
        radius,
        length: cylinder_length(aperture, radius),
        score: s,
        n,
    })
}

/// Number of values strictly below `lambda_bar`.
pub fn count_below(eigenvalues: &[f64], lambda_bar: f64) -> usize {
    eigenvalues.iter().filter(|&&l| l < lambda_bar).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_scan(ap: &Aperture, lambda_bar: f64) -> (f64, f64) {
        let n = 10_000;
        (1..n)
            .map(|i| {
                let r = PI * i as f64 / n as f64;
                (score(ap, lambda_bar, r), r)
            })
            .fold((0.0, 0.0), |m, x| if x.0 > m.0 { x } else { m })
    }

    #[test]
    fn planar_limit_gives_nothing() {
        for deg in [1.0, 10.0, 30.0] {
            let ap = Aperture::from_theta_deg(deg).unwrap();
            for lb in [0.6, 0.8, 0.99] {
                assert_eq!(cylinder_count_bound(&ap, lb).unwrap().n, 0);
            }
        }
    }

    #[test]
    fn frozen_scan_values() {
        let ap = Aperture::from_theta_deg(87.5).unwrap();
        let b = cylinder_count_bound(&ap, 0.95).unwrap();
        assert_eq!(b.n, 1);
        assert!((b.score - 1.2891630).abs() < 1e-6);
        assert!((b.radius - 2.67507).abs() < 1e-3);
        assert!((b.length - 10.75376).abs() < 1e-3);
        let ap = Aperture::from_theta_deg(85.0).unwrap();
        let b = cylinder_count_bound(&ap, 0.9).unwrap();
        assert_eq!(b.n, 0);
        assert!((b.score - 0.5428447).abs() < 1e-6);
        let ap = Aperture::from_theta_deg(89.0).unwrap();
        assert_eq!(cylinder_count_bound(&ap, 0.99).unwrap().n, 3);
    }

    #[test]
    fn optimizer_matches_scan() {
        for (deg, lb) in [(80.0, 0.95), (85.0, 0.9), (87.5, 0.95), (89.0, 0.99), (60.0, 0.99)] {
            let ap = Aperture::from_theta_deg(deg).unwrap();
            let b = cylinder_count_bound(&ap, lb).unwrap();
            let (smax, _) = grid_scan(&ap, lb);
            assert!(b.score >= smax - 1e-9, "{deg} {lb}: {} < {smax}", b.score);
            assert!(b.score <= smax + 1e-4);
            if b.n > 0 {
                assert!(b.top_eigenvalue() < lb);
            }
            assert!(b.radius > 0.0 && b.radius < PI);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let ap = Aperture::from_theta_deg(87.5).unwrap();
        assert!(cylinder_count_bound(&ap, 0.5).is_err());
        assert!(cylinder_count_bound(&ap, 1.0).is_err());
    }

    #[test]
    fn counting() {
        assert_eq!(count_below(&[], 0.9), 0);
        assert_eq!(count_below(&[0.7, 0.8, 0.95], 1.0), 3);
        assert_eq!(count_below(&[0.7, 0.8, 0.95], 0.8), 1);
    }
}
