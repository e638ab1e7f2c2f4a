//! Analytic reference values: Bessel `J0` zeros, cylinder and rectangle
//! Dirichlet spectra.

use std::f64::consts::{FRAC_PI_4, PI};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("Bessel zero index k = {0} outside 1..=20")]
    ZeroIndex(usize),
    #[error("non-positive dimension {0}")]
    Dimension(f64),
}

pub const MAX_ZERO_INDEX: usize = 20;

fn series(x: f64, order: u32) -> f64 {
    // sum_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)
    let half = 0.5 * x;
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    let q = -half * half;
    for k in 1..200 {
        let k = k as f64;
        term *= q / (k * (k + order as f64));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Miller backward recurrence, normalized by `J0 + 2 Σ J_2k = 1`.
fn miller(x: f64) -> (f64, f64) {
    let mut n = (x as usize + 40).max(60);
    n += n % 2;
    let (mut jp, mut j) = (0.0f64, 1e-30f64);
    let mut norm = 0.0;
    let mut j1 = 0.0;
    for k in (1..=n).rev() {
        let jm = 2.0 * k as f64 / x * j - jp;
        jp = j;
        j = jm;
        // j now holds J_{k-1}
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * j;
        }
        if k - 1 == 1 {
            j1 = j;
        }
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp *= 1e-250;
            norm *= 1e-250;
            j1 *= 1e-250;
        }
    }
    norm += j;
    (j / norm, j1 / norm)
}

fn hankel(x: f64, order: u32) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let (mut p, mut q) = (0.0, 0.0);
    let mut t = 1.0f64;
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            t *= (mu - odd * odd) / (8.0 * k as f64 * x);
        }
        if t.abs() > prev {
            break;
        }
        prev = t.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * t;
        } else {
            q += sign * t;
        }
        if t.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (0.5 * order as f64 + 0.5) * PI + FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Bessel function of the first kind of order 0.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 8.0 {
        series(x, 0)
    } else if x < 25.0 {
        miller(x).0
    } else {
        hankel(x, 0)
    }
}

/// Bessel function of the first kind of order 1.
pub fn bessel_j1(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    s * if x <= 8.0 {
        series(x, 1)
    } else if x < 25.0 {
        miller(x).1
    } else {
        hankel(x, 1)
    }
}

/// The `k`-th positive zero of `J0`, `k = 1..=20`.
pub fn bessel_j0_zero(k: usize) -> Result<f64, OracleError> {
    if k == 0 || k > MAX_ZERO_INDEX {
        return Err(OracleError::ZeroIndex(k));
    }
    // McMahon expansion as initial guess
    let b = (k as f64 - 0.25) * PI;
    let mut x = b + 1.0 / (8.0 * b) - 124.0 / (3.0 * (8.0 * b).powi(3));
    for _ in 0..50 {
        let dx = bessel_j0(x) / bessel_j1(x);
        x += dx;
        if dx.abs() < 1e-15 * x {
            break;
        }
    }
    Ok(x)
}

/// `j01² / π²`, the lowest Dirichlet eigenvalue of a disk of radius `π`.
pub fn lambda0() -> f64 {
    let j = bessel_j0_zero(1).expect("k = 1 is in range");
    j * j / (PI * PI)
}

/// Lowest `count` axisymmetric Dirichlet eigenvalues of a cylinder of
/// radius `r` and length `l`: `(j0p / r)² + (π q / l)²`.
pub fn cylinder_spectrum(r: f64, l: f64, count: usize) -> Result<Vec<f64>, OracleError> {
    for d in [r, l] {
        if !(d > 0.0) {
            return Err(OracleError::Dimension(d));
        }
    }
    let radial: Vec<f64> = (1..=count.min(MAX_ZERO_INDEX))
        .map(|p| bessel_j0_zero(p).map(|j| (j / r).powi(2)))
        .collect::<Result<_, _>>()?;
    let mut all: Vec<f64> = radial
        .iter()
        .flat_map(|&a| (1..=count).map(move |q| a + (PI * q as f64 / l).powi(2)))
        .collect();
    all.sort_by(f64::total_cmp);
    all.truncate(count);
    Ok(all)
}

/// Lowest `count` Dirichlet eigenvalues of the rectangle `(0,a) × (0,b)`.
pub fn rectangle_spectrum(a: f64, b: f64, count: usize) -> Result<Vec<f64>, OracleError> {
    for d in [a, b] {
        if !(d > 0.0) {
            return Err(OracleError::Dimension(d));
        }
    }
    let mut all: Vec<f64> = (1..=count)
        .flat_map(|p| (1..=count).map(move |q| PI * PI * ((p * p) as f64 / (a * a) + (q * q) as f64 / (b * b))))
        .collect();
    all.sort_by(f64::total_cmp);
    all.truncate(count);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_zeros() {
        assert!((bessel_j0_zero(1).unwrap() - 2.404825557695773).abs() < 1e-13);
        assert!((bessel_j0_zero(2).unwrap() - 5.520078110286311).abs() < 1e-13);
        // tabulated j0,10 and j0,20
        assert!((bessel_j0_zero(10).unwrap() - 30.634606468431975).abs() < 1e-11);
        assert!((bessel_j0_zero(20).unwrap() - 62.048469190227170).abs() < 1e-11);
    }

    #[test]
    fn zeros_increase_and_vanish() {
        let zs: Vec<f64> = (1..=20).map(|k| bessel_j0_zero(k).unwrap()).collect();
        for w in zs.windows(2) {
            assert!(w[1] > w[0] + 2.0);
        }
        for z in zs {
            assert!(bessel_j0(z).abs() < 1e-13, "J0({z}) = {}", bessel_j0(z));
        }
        assert!(bessel_j0_zero(0).is_err());
        assert!(bessel_j0_zero(21).is_err());
    }

    #[test]
    fn branches_agree_at_switch_points() {
        assert!((series(8.0, 0) - miller(8.0).0).abs() < 1e-13);
        assert!((series(8.0, 1) - miller(8.0).1).abs() < 1e-13);
        assert!((miller(25.0).0 - hankel(25.0, 0)).abs() < 1e-13);
        assert!((miller(25.0).1 - hankel(25.0, 1)).abs() < 1e-13);
        // the recurrence and the series agree away from the switch
        for x in [3.0, 6.5, 7.9] {
            let (j0, j1) = miller(x);
            assert!((j0 - series(x, 0)).abs() < 1e-13);
            assert!((j1 - series(x, 1)).abs() < 1e-13);
        }
        for x in [26.0, 40.0] {
            assert!((miller(x).0 - hankel(x, 0)).abs() < 1e-13);
            assert!((miller(x).1 - hankel(x, 1)).abs() < 1e-13);
        }
    }

    #[test]
    fn wronskian_like_identity() {
        // J0' = -J1
        for x in [0.7, 4.0, 12.0, 30.0] {
            let h = 1e-5;
            let d = (bessel_j0(x + h) - bessel_j0(x - h)) / (2.0 * h);
            assert!((d + bessel_j1(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda0_value() {
        assert!((lambda0() - 0.58596).abs() < 5e-6);
    }

    #[test]
    fn cylinder_examples() {
        let j = bessel_j0_zero(1).unwrap();
        let s = cylinder_spectrum(1.0, 1.0, 3).unwrap();
        assert!((s[0] - (j * j + PI * PI)).abs() < 1e-12);
        assert!((s[0] - 15.653).abs() < 1e-3);
        let long = cylinder_spectrum(PI, 1e8, 1).unwrap();
        assert!((long[0] - lambda0()).abs() < 1e-12);
    }

    #[test]
    fn rectangle_examples() {
        assert!((rectangle_spectrum(1.0, 1.0, 1).unwrap()[0] - 2.0 * PI * PI).abs() < 1e-12);
        let r = rectangle_spectrum(2.0, 1.0, 5).unwrap();
        let mut brute = Vec::new();
        for p in 1..10 {
            for q in 1..10 {
                brute.push(PI * PI * ((p * p) as f64 / 4.0 + (q * q) as f64));
            }
        }
        brute.sort_by(f64::total_cmp);
        assert_eq!(r, brute[..5].to_vec());
        assert!(rectangle_spectrum(0.0, 1.0, 1).is_err());
    }
}
