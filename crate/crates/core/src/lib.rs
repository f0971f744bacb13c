//! Economic model predictive control with a cyclically varying prediction horizon.
//!
//! The crate provides the generic problem abstractions (dynamics, mixed constraints,
//! economic cost, storage function, terminal ingredients), a brute-force grid oracle,
//! a linear-quadratic backend for a plant controlled over a token-bucket network, a
//! closed-loop simulator and sampled checkers for the stabilizing conditions and closed-loop
//! guarantees of the scheme.

// `!(a <= b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod horizon;
mod linalg;
pub mod model;
pub mod ncs;
pub mod ocp;
pub mod sim;
pub mod solver_lq;
pub mod verify;

pub use error::{ConstraintViolation, Error, Result};
pub use horizon::{horizon_length, CyclicHorizon};
pub use model::{
    rotated_stage_cost, rotated_terminal_cost, set_distance, BoxSet, DissipativityCertificate,
    FnModel, Input, ProblemModel, ProjectionSet, QuadraticKInf, State, TargetSet,
    TerminalIngredients, Vector,
};
pub use ncs::{NcsOptions, NcsPlant, NcsState, NcsSystem, TokenBucketParams};
pub use ocp::{
    brute_force_solve, shifted_candidate, solve_ocp, OcpBackend, OcpInstance, OcpSolution,
};
