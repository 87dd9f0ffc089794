//! Per-slot convex subproblem as a real second-order-cone program.
//!
//! The SINR requirements become second-order cones after fixing the phase of
//! each user's own channel gain, the quadratic per-BS transmit power enters
//! through a rotated-cone epigraph, and the piecewise-linear transaction cost
//! through two linear epigraph rows per BS.

mod oracle;
mod program;
mod slot;

pub use oracle::{oracle_solve, weighted_min_power, MinPower};
pub use program::{
    solve, Affine, Cone, ConicProgram, ConicSolution, ProgramBuilder, Residuals, SolveStatus,
    SolverOptions, VarSlice,
};
pub use slot::{
    add_slot_block, build_slot_program, embed_complex, is_servable, solve_slot, RealEmbedding,
    SlotBlock, SlotDecision, SlotInputs, SlotProgram, Supply,
};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("solver backend error: {0}")]
    Backend(String),
    #[error("SINR targets infeasible under the power caps")]
    Infeasible,
    #[error("solver stopped at its numerical limit (residuals {primal:e}/{dual:e}, gap {gap:e})")]
    NumericalLimit { primal: f64, dual: f64, gap: f64 },
    #[error("problem too large for this routine: {0}")]
    Guard(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
