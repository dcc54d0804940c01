//! Solver library for nonsmooth difference-of-convex (DC) optimization with
//! DC equality and inequality constraints.
//!
//! The outer algorithm is an exact-penalty DCA whose `l1` penalty parameter is
//! driven by a steering update rule: auxiliary convex feasibility subproblems
//! measure the best achievable linearized infeasibility and the penalty
//! parameter is raised just enough to track a fixed fraction of it. Convex
//! subproblems are handled by a built-in proximal bundle method over
//! box/affine feasible sets, so there is no external solver dependency.
//!
//! Crate layout:
//! - [`expr`]/[`problem`]: convex atom algebra, DC functions, feasible sets,
//!   problem validation and the serializable problem format ([`io`]).
//! - [`oracle`]: the first-order oracle interface shared by every evaluator.
//! - [`penalty`]: penalty function, linearized infeasibility measure and the
//!   convex majorant used by the outer iteration.
//! - [`subsolver`]: proximal bundle method, projections, and a brute-force
//!   grid oracle for tests.
//! - [`steering`]: the outer algorithm, criticality diagnostics and trace
//!   export.
//! - [`problems`]: benchmark problem builders (production planning and train
//!   control) plus the toy instances used throughout the tests.

pub mod expr;
pub mod io;
pub mod oracle;
pub mod penalty;
pub mod problem;
pub mod problems;
pub mod steering;
pub mod subsolver;

pub use expr::{Affine, Atom, ConvexExpr, EvalOptions, ModelError};
pub use problem::{dc_value, regularize_objective, DCFunction, DCProblem, DcValue, Equalities, FeasibleSet, Violation};
pub use subsolver::{grid_minimize, minimize, SubsolveConfig, SubsolveResult, SubsolveStatus};
