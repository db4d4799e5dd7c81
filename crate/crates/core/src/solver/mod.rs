//! Regularized least-squares objective, trust-region LM and its inner solver.

pub mod constraints;
pub mod lm;
pub mod objective;
pub mod sgp;

pub use constraints::{ConstraintConfig, Constraints};
pub use lm::{lm_solve, lm_step, relative_errors, rho, BranchTag, SolverConfig, StepProposal, Trajectory, TrajectoryRecord, TrustRegionState};
pub use objective::{geometry_weights, LinearModel, Objective, Problem, RegularizationConfig};
pub use sgp::{sgp_solve, InnerConfig, InnerResult, StepSource};

use crate::error::Result;
use crate::forward::{Bounds, ImagePair, Projector, Sinogram};
use crate::geometry::Mask;
use crate::phantom::AssemblySpec;

/// Default starting point: half the bounds inside the disk (feasible for the
/// default wedge).
pub fn initial_guess(mask: &Mask, bounds: Bounds) -> ImagePair {
    ImagePair::constant(mask, 0.5 * bounds.lambda_max, 0.5 * bounds.mu_max, bounds)
}

/// Problem with lattice regularization weights and the wedge constraint.
pub fn standard_problem<'a>(
    projector: &'a Projector,
    y: &'a Sinogram,
    spec: &AssemblySpec,
    bounds: Bounds,
    ccfg: &ConstraintConfig,
) -> Result<Problem<'a>> {
    let mask = projector.mask();
    let weights = geometry_weights(&projector.tables.grid, spec, mask);
    let constraints = Constraints::new(mask, bounds.mu_max, ccfg);
    Problem::new(projector, y, bounds, weights, constraints)
}
