//! Convex programs with linear objective, linear equalities, convex quadratic
//! inequalities and base-2 exponential inequalities, solved by a primal-dual
//! interior-point method.

mod ipm;
mod newton;
mod program;

pub use ipm::{solve, NewtonMethod, Solution, SolveStatus, SolverError, SolverOptions};
pub use program::{ConstraintTag, ConvexProgram, ExpConstraint, LinearEquality, QuadConstraint, SparseVec, VarKind};
