//! Linear-quadratic backend for the token-bucket NCS: schedule enumeration, condensed
//! convex subproblems, and the numerical engines behind them.

mod admm;
pub(crate) mod condense;
mod ellipsoid;
pub mod qp;
mod schedule;
mod subproblem;

pub use admm::SplittingOptions;
pub use ellipsoid::project_onto_ellipsoid;
pub use qp::{
    solve_qp, InfeasibilityCertificate, QpOptions, QpOutcome, QpSolution, QuadraticProgram,
};
pub use schedule::{
    enumerate_schedules, solve_schedule_ocp, solve_schedule_ocp_detailed, terminal_bucket_level,
    NcsBackend, Schedule, ScheduleOptions, ScheduleResult,
};
pub use subproblem::{
    EllipsoidConstraint, EllipsoidMethod, QuadraticSubproblem, SubproblemOutcome,
    SubproblemSolution,
};
