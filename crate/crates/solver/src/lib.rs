//! Numerical back end for the microgrid controller: a dense convex QP solver
//! and an exact branch-and-bound for problems with binary variables.

mod admm;
pub mod bnb;
mod error;
pub mod qp;
mod skyline;
mod sparse;

pub use admm::QpSolver;
pub use bnb::{branch_select, enumerate_oracle, solve_miqp, BnbConfig, BnbSolution, BnbStatus, MixedBinaryQp};
pub use error::{BnbError, QpError};
pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpDuals, QpSettings, QpSolution, QpStatus, QuadraticProgram, WarmStart};
