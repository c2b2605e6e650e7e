//! Penalized calibration of survey weights.
//!
//! Weights `x` are adjusted away from base weights `y` as little as a chosen
//! deviance allows while matching exact constraints `A1 x = t1` and being
//! pulled toward penalized targets `A2 x ~ t2` with strength `alpha`.
//! Penalties are turned into extra equality rows so every method reduces to a
//! Newton solve on the Lagrange multipliers, or to a box-constrained QP.

// `!(a > b)` is used on purpose so NaN inputs fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deviance;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod path;
pub mod problem;
pub mod qp;
pub mod solver;
pub mod synth;

pub use deviance::{make_mixed, DevianceFamily, DevianceKind, MixedDeviance};
pub use diagnostics::{detect_unachievable, export_path, target_report, weight_dispersion, Finding};
pub use error::{Error, Result};
pub use linalg::{estimate_rank, gram_solve, spmv, DiagScale, SparseMatrix};
pub use path::{check_stationarity, irls_step, run_path, Method, PathConfig, PathRecord, PathResult};
pub use problem::{build_augmented, AugmentedSystem, Bounds, CalibrationProblem, PenaltyKind, Target};
pub use qp::{qp_solve_box, QpProblem, QpSolution};
pub use solver::{newton_solve, solve_quadratic_exact, SolveOptions, SolveStatus, SolverState, StatusKind};
