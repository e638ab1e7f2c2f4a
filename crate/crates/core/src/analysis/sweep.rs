use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{solve_layer, AnalysisError, ConvergencePolicy, LayerParams, LayerSolution};
use crate::geometry::Aperture;

/// Environment variable capping the number of sweep workers.
pub const THREADS_ENV: &str = "CONELAYER_THREADS";

/// Worker count: `CONELAYER_THREADS` when set to a positive integer,
/// otherwise the available parallelism.
pub fn threads_from_env() -> usize {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => hw,
    }
}

/// Summary of one angle of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleOutcome {
    pub theta: f64,
    pub beta: f64,
    pub eigenvalues: Vec<f64>,
    pub error_estimate: Vec<f64>,
    pub converged: Vec<bool>,
    pub residuals: Vec<f64>,
    pub s_max: f64,
    pub ndof: usize,
    pub truncation_converged: bool,
    pub error: Option<String>,
}

impl AngleOutcome {
    fn from_solution(sol: &LayerSolution, j_max: usize) -> Self {
        let n = sol.eigenvalues.len().min(j_max);
        AngleOutcome {
            theta: sol.aperture.theta(),
            beta: sol.aperture.beta(),
            eigenvalues: sol.eigenvalues[..n].to_vec(),
            error_estimate: sol.report.error_estimate[..n].to_vec(),
            converged: sol.report.converged[..n].to_vec(),
            residuals: sol.spectrum.residuals[..n].to_vec(),
            s_max: sol.report.s_max,
            ndof: sol.system.ndof(),
            truncation_converged: sol.report.truncation_converged,
            error: None,
        }
    }

    fn failed(ap: &Aperture, err: &AnalysisError) -> Self {
        AngleOutcome {
            theta: ap.theta(),
            beta: ap.beta(),
            eigenvalues: Vec::new(),
            error_estimate: Vec::new(),
            converged: Vec::new(),
            residuals: Vec::new(),
            s_max: f64::NAN,
            ndof: 0,
            truncation_converged: false,
            error: Some(err.to_string()),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub j_max: usize,
    /// One entry per input angle, in input order.
    pub outcomes: Vec<AngleOutcome>,
}

impl SweepResult {
    /// Branch `j` (zero-based) across the angles; `None` where it is absent.
    pub fn branch(&self, j: usize) -> Vec<Option<f64>> {
        self.outcomes.iter().map(|o| o.eigenvalues.get(j).copied()).collect()
    }

    /// Pairs `(branch, angle index)` where a branch increases with `θ` by
    /// more than twice the error estimate of the two entries.
    pub fn monotonicity_violations(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.outcomes.len()).filter(|&i| self.outcomes[i].succeeded()).collect();
        order.sort_by(|&a, &b| self.outcomes[a].theta.total_cmp(&self.outcomes[b].theta));
        let mut out = Vec::new();
        for j in 0..self.j_max {
            for w in order.windows(2) {
                let (lo, hi) = (&self.outcomes[w[0]], &self.outcomes[w[1]]);
                if let (Some(a), Some(b)) = (lo.eigenvalues.get(j), hi.eigenvalues.get(j)) {
                    let slack = 2.0 * lo.error_estimate[j].max(hi.error_estimate[j]);
                    if b > &(a + slack) {
                        out.push((j, w[1]));
                    }
                }
            }
        }
        out
    }

    /// Smallest gap `λ_{j+1} - λ_j` over all angles with its angle index.
    pub fn min_gap(&self) -> Option<(f64, usize)> {
        self.outcomes
            .iter()
            .enumerate()
            .flat_map(|(i, o)| o.eigenvalues.windows(2).map(move |w| (w[1] - w[0], i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Solves every angle independently on up to `threads` workers. Failures
/// are recorded per angle and do not stop the sweep.
pub fn sweep(
    angles: &[Aperture],
    j_max: usize,
    params: &LayerParams,
    policy: &ConvergencePolicy,
    threads: usize,
) -> Result<SweepResult, AnalysisError> {
    let thetas: Vec<f64> = angles.iter().map(|a| a.theta()).collect();
    let up = thetas.windows(2).all(|w| w[0] <= w[1]);
    let down = thetas.windows(2).all(|w| w[0] >= w[1]);
    if !(up || down) {
        return Err(AnalysisError::BadParameter("sweep angles must be sorted".into()));
    }
    if j_max == 0 {
        return Err(AnalysisError::BadParameter("j_max must be at least 1".into()));
    }
    let mut params = params.clone();
    params.solver.k = j_max;
    let slots: Vec<Mutex<Option<AngleOutcome>>> = angles.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= angles.len() {
            break;
        }
        let outcome = match solve_layer(&angles[i], 0, &params, policy) {
            Ok(sol) => AngleOutcome::from_solution(&sol, j_max),
            Err(e) => AngleOutcome::failed(&angles[i], &e),
        };
        *slots[i].lock().expect("no worker panics while holding a slot") = Some(outcome);
    };
    let workers = threads.clamp(1, angles.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let outcomes = slots
        .into_iter()
        .map(|m| m.into_inner().expect("unpoisoned").expect("every angle is visited"))
        .collect();
    Ok(SweepResult { j_max, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Truncation;
    use crate::geometry::MeshParams;

    fn setup() -> (LayerParams, ConvergencePolicy) {
        let mut params = LayerParams::with_k(2);
        params.mesh = MeshParams::new(0.5, 1e3).with_far_aspect(2.0);
        let policy = ConvergencePolicy { truncation: Truncation::Fixed(60.0), refine: false, ..Default::default() };
        (params, policy)
    }

    #[test]
    fn single_angle_matches_solve() {
        let (params, policy) = setup();
        let ap = Aperture::from_theta_deg(70.0).unwrap();
        let sw = sweep(&[ap], 2, &params, &policy, 1).unwrap();
        let sol = solve_layer(&ap, 0, &params, &policy).unwrap();
        assert_eq!(sw.outcomes[0].eigenvalues, sol.eigenvalues[..sw.outcomes[0].eigenvalues.len()].to_vec());
    }

    #[test]
    fn threads_do_not_change_results() {
        let (params, policy) = setup();
        let angles: Vec<Aperture> = [60.0, 65.0, 70.0].iter().map(|&d| Aperture::from_theta_deg(d).unwrap()).collect();
        let a = sweep(&angles, 2, &params, &policy, 1).unwrap();
        let b = sweep(&angles, 2, &params, &policy, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.monotonicity_violations().is_empty());
        assert!(a.branch(0).iter().all(|v| v.is_some()));
    }

    #[test]
    fn unsorted_angles_rejected() {
        let (params, policy) = setup();
        let angles: Vec<Aperture> = [60.0, 70.0, 65.0].iter().map(|&d| Aperture::from_theta_deg(d).unwrap()).collect();
        assert!(sweep(&angles, 2, &params, &policy, 1).is_err());
    }

    #[test]
    fn failures_are_recorded() {
        let (params, mut policy) = setup();
        policy.truncation = Truncation::Fixed(1.0);
        let angles = [Aperture::from_theta_deg(80.0).unwrap()];
        let sw = sweep(&angles, 1, &params, &policy, 1).unwrap();
        assert!(!sw.outcomes[0].succeeded());
    }
}
