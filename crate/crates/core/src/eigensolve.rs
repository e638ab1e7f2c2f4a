//! Lowest eigenpairs of the symmetric definite pencil `A x = λ B x`.
//!
//! The sparse path runs a thick-restart (Krylov–Schur) Lanczos iteration on
//! the shift-inverted operator `(A - σB)⁻¹ B` in the `B` inner product, with
//! full reorthogonalization. Sylvester inertia of `A - tB` counts the
//! eigenvalues below the continuum threshold so that none are missed.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assembly::AssembledSystem;
use crate::oracles::lambda0;
use crate::sparse::{EnvelopeLdl, SparseError, SparseSymmetric};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("factorization of A - σB failed after retries: {0}")]
    Factorization(SparseError),
    #[error("invalid solver parameters: {0}")]
    Params(String),
    #[error("dense solve limited to dimension {cap}, got {dim}")]
    TooLarge { dim: usize, cap: usize },
    #[error("mass matrix is not positive definite")]
    MassNotDefinite,
}

pub const START_SEED: u64 = 0x5EED;
pub const DENSE_CAP: usize = 3000;
/// Eigenvalues closer than this form a degenerate cluster.
pub const CLUSTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolveParams {
    pub k: usize,
    pub sigma: f64,
    pub tol: f64,
    /// Budget of operator applications.
    pub max_iter: usize,
    pub threshold: f64,
}

impl Default for EigenSolveParams {
    fn default() -> Self {
        EigenSolveParams { k: 1, sigma: 0.5 * lambda0(), tol: 1e-9, max_iter: 20_000, threshold: 1.0 }
    }
}

impl EigenSolveParams {
    pub fn with_k(k: usize) -> Self {
        EigenSolveParams { k, ..Default::default() }
    }

    fn validate(&self) -> Result<(), EigenError> {
        if self.k == 0 {
            return Err(EigenError::Params("k must be at least 1".into()));
        }
        if !(self.sigma < self.threshold) {
            return Err(EigenError::Params(format!("sigma {} must lie below threshold {}", self.sigma, self.threshold)));
        }
        if !(self.tol > 0.0) {
            return Err(EigenError::Params("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveMeta {
    pub operator_applications: usize,
    pub restarts: usize,
    pub factorizations: usize,
    pub envelope_entries: usize,
    pub sigma_used: f64,
    /// Eigenvalues of the discrete pencil below the threshold, by inertia.
    pub count_below_threshold: Option<usize>,
}

/// One eigenpair with its certified residual `‖Ax - λBx‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Discrete eigenvalues below the threshold, ascending.
    pub eigenvalues: Vec<f64>,
    /// `B`-orthonormal eigenvectors over the free dofs.
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Converged pairs at or above the threshold, ascending.
    pub above_threshold: Vec<EigenPair>,
    /// Eigenvalues in `[threshold, threshold + tol]`.
    pub threshold_ambiguous: Vec<f64>,
    /// Groups of indices into `eigenvalues` closer than `CLUSTER_TOL`.
    pub clusters: Vec<Vec<usize>>,
    pub converged: bool,
    pub meta: SolveMeta,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Smallest computed Ritz value, below or above the threshold.
    pub fn smallest(&self) -> Option<f64> {
        self.eigenvalues.first().copied().or_else(|| self.above_threshold.first().map(|p| p.value))
    }

    fn from_pairs(mut pairs: Vec<EigenPair>, threshold: f64, tol: f64, converged: bool, meta: SolveMeta) -> Self {
        pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
        // fix the sign: the entry of largest magnitude is positive
        for p in pairs.iter_mut() {
            let big = p.vector.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if big < 0.0 {
                p.vector.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let (below, above): (Vec<EigenPair>, Vec<EigenPair>) = pairs.into_iter().partition(|p| p.value < threshold);
        let threshold_ambiguous =
            above.iter().map(|p| p.value).filter(|&v| v <= threshold + tol).collect();
        let eigenvalues: Vec<f64> = below.iter().map(|p| p.value).collect();
        let clusters = clusters_of(&eigenvalues, CLUSTER_TOL);
        Spectrum {
            residuals: below.iter().map(|p| p.residual).collect(),
            eigenvectors: below.into_iter().map(|p| p.vector).collect(),
            eigenvalues,
            above_threshold: above,
            threshold_ambiguous,
            clusters,
            converged,
            meta,
        }
    }
}

/// Maximal runs of consecutive sorted values closer than `tol`, of size ≥ 2.
pub fn clusters_of(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize];
    for i in 1..values.len() {
        if values[i] - values[i - 1] < tol {
            cur.push(i);
        } else {
            if cur.len() > 1 {
                out.push(cur.clone());
            }
            cur = vec![i];
        }
    }
    if cur.len() > 1 {
        out.push(cur);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm of `Ax - λBx`.
pub fn residual_norm(a: &SparseSymmetric, b: &SparseSymmetric, lambda: f64, x: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let bx = b.mul_vec(x);
    ax.iter().zip(&bx).map(|(p, q)| (p - lambda * q).powi(2)).sum::<f64>().sqrt()
}

fn factor_shifted(
    a: &SparseSymmetric,
    b: &SparseSymmetric,
    shift: f64,
    perm: &[usize],
    meta: &mut SolveMeta,
) -> Result<(EnvelopeLdl, f64), EigenError> {
    let mut last = None;
    for attempt in 0..4 {
        let s = shift + attempt as f64 * 1e-7 * shift.abs().max(1e-3);
        let m = a.combine(1.0, b, -s).map_err(EigenError::Factorization)?;
        meta.factorizations += 1;
        match EnvelopeLdl::factor_with(&m, perm.to_vec()) {
            Ok(f) => return Ok((f, s)),
            Err(e @ SparseError::TooLarge(_)) => return Err(EigenError::Factorization(e)),
            Err(e) => last = Some(e),
        }
    }
    Err(EigenError::Factorization(last.expect("at least one attempt")))
}

/// Lowest eigenpairs of the pencil `(A, B)`; see the module docs.
pub fn solve_lowest(system: &AssembledSystem, params: &EigenSolveParams) -> Result<Spectrum, EigenError> {
    solve_pencil(&system.a, &system.b, params)
}

pub fn solve_pencil(a: &SparseSymmetric, b: &SparseSymmetric, params: &EigenSolveParams) -> Result<Spectrum, EigenError> {
    params.validate()?;
    let n = a.dim();
    let mut meta = SolveMeta::default();
    let perm = crate::sparse::rcm_ordering(&a.combine(1.0, b, 1.0).map_err(EigenError::Factorization)?.graph());

    let (ft, _) = factor_shifted(a, b, params.threshold, &perm, &mut meta)?;
    let below = ft.negative_pivots();
    meta.count_below_threshold = Some(below);
    drop(ft);

    // the shift must lie below the whole spectrum so that the lowest
    // eigenvalues are the dominant ones of the inverted operator
    let mut sigma = params.sigma;
    let mut fac = None;
    for _ in 0..8 {
        let (f, s) = factor_shifted(a, b, sigma, &perm, &mut meta)?;
        if f.negative_pivots() == 0 {
            fac = Some((f, s));
            break;
        }
        sigma -= 2.0 * sigma.abs().max(1.0);
    }
    let (fac, sigma) = fac.ok_or_else(|| EigenError::Params("could not place the shift below the spectrum".into()))?;
    meta.sigma_used = sigma;
    meta.envelope_entries = fac.envelope_size();

    let nev = params.k.min(below).max(1).min(n);
    let (pairs, converged) = lanczos(a, b, &fac, sigma, nev, params, &mut meta);
    Ok(Spectrum::from_pairs(pairs, params.threshold, params.tol, converged, meta))
}

/// Krylov–Schur iteration for the `nev` largest eigenvalues `μ` of
/// `(A - σB)⁻¹B`; returns pairs in terms of `λ = σ + 1/μ`.
fn lanczos(
    a: &SparseSymmetric,
    b: &SparseSymmetric,
    fac: &EnvelopeLdl,
    sigma: f64,
    nev: usize,
    params: &EigenSolveParams,
    meta: &mut SolveMeta,
) -> (Vec<EigenPair>, bool) {
    let n = a.dim();
    let ncv = (2 * nev + 24).max(40).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(ncv + 1);
    let mut bv: Vec<Vec<f64>> = Vec::with_capacity(ncv + 1);
    let mut h = DMatrix::<f64>::zeros(ncv + 1, ncv + 1);

    let random_vector = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() - 0.5).collect() };

    // orthogonalize w against v (B inner product) twice; returns coefficients
    let orthogonalize = |w: &mut Vec<f64>, v: &[Vec<f64>], bv: &[Vec<f64>]| -> Vec<f64> {
        let mut coef = vec![0.0; v.len()];
        for _ in 0..2 {
            for (i, bvi) in bv.iter().enumerate() {
                let c = dot(bvi, w);
                coef[i] += c;
                axpy(-c, &v[i], w);
            }
        }
        coef
    };

    let mut start = random_vector(&mut rng);
    let mut bs = b.mul_vec(&start);
    let norm = dot(&start, &bs).sqrt();
    start.iter_mut().for_each(|x| *x /= norm);
    bs.iter_mut().for_each(|x| *x /= norm);
    v.push(start);
    bv.push(bs);

    let mut k = 0usize; // number of locked-in (restarted) vectors
    let mut best: Vec<EigenPair> = Vec::new();
    loop {
        // extend the basis to ncv vectors
        for j in k..ncv {
            let mut w = fac.solve(&bv[j]);
            meta.operator_applications += 1;
            let coef = orthogonalize(&mut w, &v, &bv);
            for (i, &c) in coef.iter().enumerate() {
                if i < j {
                    // the symmetric counterpart is already in place
                    h[(i, j)] = 0.5 * (h[(i, j)] + c);
                    h[(j, i)] = h[(i, j)];
                } else {
                    h[(i, j)] = c;
                }
            }
            let mut bw = b.mul_vec(&w);
            let mut beta = dot(&w, &bw).max(0.0).sqrt();
            if beta < 1e-13 * h[(j, j)].abs().max(1e-300) {
                // invariant subspace: continue with a fresh random direction
                beta = 0.0;
                let mut r = random_vector(&mut rng);
                orthogonalize(&mut r, &v, &bv);
                bw = b.mul_vec(&r);
                let nr = dot(&r, &bw).max(0.0).sqrt();
                let scale = if nr > 1e-150 { 1.0 / nr } else { 0.0 };
                r.iter_mut().for_each(|x| *x *= scale);
                bw.iter_mut().for_each(|x| *x *= scale);
                w = r;
            } else {
                w.iter_mut().for_each(|x| *x /= beta);
                bw.iter_mut().for_each(|x| *x /= beta);
            }
            h[(j + 1, j)] = beta;
            h[(j, j + 1)] = beta;
            v.push(w);
            bv.push(bw);
        }
        let m = ncv;
        let hm = h.view((0, 0), (m, m)).into_owned();
        let hs = 0.5 * (&hm + hm.transpose());
        let eig = SymmetricEigen::new(hs);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
        let beta_m = h[(m, m - 1)];

        // candidates: Ritz estimate small relative to μ
        let mut pairs = Vec::with_capacity(nev);
        let mut all_ok = true;
        for &idx in order.iter().take(nev) {
            let mu = eig.eigenvalues[idx];
            let est = (beta_m * eig.eigenvectors[(m - 1, idx)]).abs();
            if !(est <= 1e-2 * params.tol * mu.abs()) && meta.operator_applications < params.max_iter {
                all_ok = false;
                break;
            }
            let mut x = vec![0.0; n];
            for i in 0..m {
                axpy(eig.eigenvectors[(i, idx)], &v[i], &mut x);
            }
            let bx = b.mul_vec(&x);
            let nx = dot(&x, &bx).sqrt();
            x.iter_mut().for_each(|t| *t /= nx);
            let lambda = sigma + 1.0 / mu;
            let res = residual_norm(a, b, lambda, &x);
            if !(res <= params.tol) {
                all_ok = false;
            }
            pairs.push(EigenPair { value: lambda, vector: x, residual: res });
        }
        if pairs.len() == nev {
            best = pairs;
        }
        if (all_ok && best.len() == nev) || meta.operator_applications >= params.max_iter {
            let converged = all_ok && best.len() == nev;
            if best.len() < nev {
                // budget exhausted before candidates formed: report current Ritz pairs
                best = order
                    .iter()
                    .take(nev)
                    .map(|&idx| {
                        let mut x = vec![0.0; n];
                        for i in 0..m {
                            axpy(eig.eigenvectors[(i, idx)], &v[i], &mut x);
                        }
                        let nx = dot(&x, &b.mul_vec(&x)).sqrt();
                        x.iter_mut().for_each(|t| *t /= nx);
                        let lambda = sigma + 1.0 / eig.eigenvalues[idx];
                        let residual = residual_norm(a, b, lambda, &x);
                        EigenPair { value: lambda, vector: x, residual }
                    })
                    .collect();
            }
            return (best, converged);
        }

        // thick restart keeping the leading Ritz vectors
        let keep = (nev + (m - nev) / 2).min(m - 1).max(nev);
        let mut nv = Vec::with_capacity(ncv + 1);
        let mut nbv = Vec::with_capacity(ncv + 1);
        for &idx in order.iter().take(keep) {
            let mut x = vec![0.0; n];
            let mut bx = vec![0.0; n];
            for i in 0..m {
                let c = eig.eigenvectors[(i, idx)];
                axpy(c, &v[i], &mut x);
                axpy(c, &bv[i], &mut bx);
            }
            nv.push(x);
            nbv.push(bx);
        }
        h.fill(0.0);
        for (p, &idx) in order.iter().take(keep).enumerate() {
            h[(p, p)] = eig.eigenvalues[idx];
            let c = beta_m * eig.eigenvectors[(m - 1, idx)];
            h[(keep, p)] = c;
            h[(p, keep)] = c;
        }
        nv.push(v.pop().expect("residual vector"));
        nbv.push(bv.pop().expect("residual vector"));
        v = nv;
        bv = nbv;
        k = keep;
        meta.restarts += 1;
    }
}

/// Full spectrum by Cholesky reduction to a standard symmetric problem.
pub fn solve_dense(system: &AssembledSystem) -> Result<Spectrum, EigenError> {
    solve_dense_pencil(&system.a, &system.b, f64::INFINITY)
}

pub fn solve_dense_pencil(a: &SparseSymmetric, b: &SparseSymmetric, threshold: f64) -> Result<Spectrum, EigenError> {
    let n = a.dim();
    if n > DENSE_CAP {
        return Err(EigenError::TooLarge { dim: n, cap: DENSE_CAP });
    }
    let ad = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
    let bd = DMatrix::from_fn(n, n, |i, j| b.get(i, j));
    let chol = bd.clone().cholesky().ok_or(EigenError::MassNotDefinite)?;
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(&ad).ok_or(EigenError::MassNotDefinite)?;
    let c = l.solve_lower_triangular(&linv_a.transpose()).ok_or(EigenError::MassNotDefinite)?;
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let lt = l.transpose();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let y = eig.eigenvectors.column(i).into_owned();
        let x = lt.solve_upper_triangular(&y).ok_or(EigenError::MassNotDefinite)?;
        let x: Vec<f64> = x.iter().copied().collect();
        let value = eig.eigenvalues[i];
        let residual = residual_norm(a, b, value, &x);
        pairs.push(EigenPair { value, vector: x, residual });
    }
    let meta = SolveMeta { count_below_threshold: None, ..Default::default() };
    Ok(Spectrum::from_pairs(pairs, threshold, 0.0, true, meta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub residuals: Vec<f64>,
    /// `X^T B X` over the reported discrete eigenvectors.
    pub gram: Vec<Vec<f64>>,
}

impl ResidualReport {
    pub fn max_gram_deviation(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, row) in self.gram.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                d = d.max((g - e).abs());
            }
        }
        d
    }
}

/// Recomputes residuals and the `B`-Gram matrix of a spectrum.
pub fn residual_report(system: &AssembledSystem, spectrum: &Spectrum) -> ResidualReport {
    residual_report_pencil(&system.a, &system.b, &spectrum.eigenvalues, &spectrum.eigenvectors)
}

pub fn residual_report_pencil(
    a: &SparseSymmetric,
    b: &SparseSymmetric,
    values: &[f64],
    vectors: &[Vec<f64>],
) -> ResidualReport {
    let residuals = values.iter().zip(vectors).map(|(&l, x)| residual_norm(a, b, l, x)).collect();
    let bx: Vec<Vec<f64>> = vectors.iter().map(|x| b.mul_vec(x)).collect();
    let gram = vectors.iter().map(|x| bx.iter().map(|y| dot(x, y)).collect()).collect();
    ResidualReport { residuals, gram }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    fn diag(v: &[f64]) -> SparseSymmetric {
        let mut b = TripletBuilder::new(v.len());
        for (i, &x) in v.iter().enumerate() {
            b.add(i, i, x);
        }
        b.build()
    }

    fn params(k: usize, threshold: f64) -> EigenSolveParams {
        EigenSolveParams { k, sigma: 0.1, tol: 1e-9, max_iter: 20_000, threshold }
    }

    #[test]
    fn diagonal_examples() {
        let a = diag(&[1.0, 2.0, 3.0]);
        let s = solve_pencil(&a, &SparseSymmetric::identity(3), &params(1, 10.0)).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((s.eigenvectors[0][0].abs() - 1.0).abs() < 1e-10);
        let s = solve_pencil(&a, &diag(&[2.0, 2.0, 2.0]), &params(3, 10.0)).unwrap();
        for (x, e) in s.eigenvalues.iter().zip([0.5, 1.0, 1.5]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_two_by_two() {
        let a = diag(&[2.0, 4.0]);
        let b = diag(&[1.0, 2.0]);
        let s = solve_dense_pencil(&a, &b, f64::INFINITY).unwrap();
        assert_eq!(s.eigenvalues.len(), 2);
        assert!(s.eigenvalues.iter().all(|v| (v - 2.0).abs() < 1e-14));
        assert_eq!(s.clusters, vec![vec![0, 1]]);
    }

    #[test]
    fn threshold_splits_the_spectrum() {
        let a = diag(&[0.5, 0.9, 1.5, 2.0]);
        let s = solve_pencil(&a, &SparseSymmetric::identity(4), &params(5, 1.0)).unwrap();
        assert_eq!(s.eigenvalues.len(), 2);
        assert_eq!(s.meta.count_below_threshold, Some(2));
        let s = solve_pencil(&diag(&[1.5, 2.0]), &SparseSymmetric::identity(2), &params(3, 1.0)).unwrap();
        assert!(s.is_empty());
        assert!((s.smallest().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn clusters_detected() {
        assert_eq!(clusters_of(&[0.1, 0.2, 0.2 + 1e-12, 0.3], 1e-10), vec![vec![1, 2]]);
        assert!(clusters_of(&[0.1, 0.2], 1e-10).is_empty());
    }
}
