//! Converged layer solves and the quantities derived from them: angle
//! sweeps, eigenvalue derivatives, the inscribed-cylinder counting bound,
//! nodal structure and axial profiles.

mod bound;
mod derivative;
mod layer;
mod nodal;
mod sweep;

use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::eigensolve::EigenError;
use crate::geometry::GeometryError;

pub use bound::{count_below, cylinder_count_bound, cylinder_length, CylinderBound};
pub use derivative::{
    central_difference, eigenvalue_derivative_fd, eigenvalue_derivative_fh, scaled_eigenvalues, DerivativeEstimate,
    FdEstimate, FhEstimate, SplitTerms, CAUCHY_CONTRACTION, FH_LEVELS,
};
pub use layer::{
    initial_smax, solve_layer, ConvergencePolicy, ConvergenceReport, LayerParams, LayerSolution, LevelRecord,
    Truncation,
};
pub use nodal::{
    extent_fraction, nodal_extract, nodal_extract_field, node_spacing_report, profile_report, profile_report_field,
    NodalData, ProfileReport, SpacingReport, SUBDIVISION,
};
pub use sweep::{sweep, threads_from_env, AngleOutcome, SweepResult, THREADS_ENV};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("branch {j} unavailable at θ = {theta}: {available} eigenvalues below the threshold")]
    MissingBranch { theta: f64, j: usize, available: usize },
    #[error("branch {j} is not simple near θ = {theta} (smallest gap {gap:.3e})")]
    BranchCrossing { theta: f64, j: usize, gap: f64 },
    #[error("field is numerically zero (max |ψ| = {0:.3e})")]
    ZeroField(f64),
    #[error("{ndof} degrees of freedom exceed the budget of {budget}")]
    Budget { ndof: usize, budget: usize },
}
