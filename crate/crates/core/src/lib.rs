//! Self-consistent time-dependent Kohn-Sham solver on bounded grids.
//!
//! The crate evolves a finite system of orbitals on a Dirichlet box under an
//! effective potential that depends on the orbitals' own density (softened
//! Coulomb interaction plus an optional history-type exchange-correlation
//! term). The coupled problem is posed as a fixed-point equation for a
//! propagation map over a time window; the solvers find that fixed point by
//! plain contraction iteration, by an exact Newton method on the residual
//! map, and by a Newton variant whose inverse Jacobian is replaced with a
//! truncated geometric expansion. Every convergence guarantee the solvers
//! advertise is backed by computable constants, and the `diagnostics`
//! module re-derives each advertised identity or bound from runs so it can
//! be checked numerically.

pub mod constants;
pub mod conv;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod neumann;
pub mod newton;
pub mod picard;
pub mod potential;
pub mod sampling;
pub mod trace;

pub mod evolution;

pub use constants::{
    build_constants, embedding_constants, product_bound_constant, ConstantsBundle, ConstantsMode,
    EmbeddingConstants, NeumannConstants, NewtonConstants,
};
pub use diagnostics::{
    charge_drift, convergence_order, duhamel_identity_residual, energy_identity_residuals,
    gateaux_fd_check, hartree_difference_bound_check, hartree_product_bound_check,
    potential_lipschitz_check, zero_force_value, CheckResult,
};
pub use error::{Error, Result};
pub use evolution::{Propagator, WindowSpec};
pub use grid::{DensityField, FieldPath, Grid, NormKind, OrbitalSet, Trajectory};
pub use neumann::{
    approx_newton_solve, choose_truncation, neumann_apply, prepare_neumann, NeumannPolicy,
    TruncationMode,
};
pub use newton::{
    newton_constants, newton_seed, newton_solve, prepare_newton, solve_linearized, Linearization,
    NewtonOptions,
};
pub use picard::{continue_in_time, initial_iterate, picard_continuation, picard_solve};
pub use potential::{
    EnergyBreakdown, ExternalPotential, HartreeSpec, KernelNorms, Potential, PotentialModel, XcSpec,
};
pub use trace::IterationTrace;
