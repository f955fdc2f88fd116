//! Kernel collocation solvers for nonlinear equations observed through
//! finitely many measurements.
//!
//! The solution space is a reproducing kernel Hilbert space. A nonlinear
//! operator `F(L₁u(x), …, L_Qu(x), x)` is observed through test functions
//! `φ_n`; the recovered function is the minimum-norm element matching the
//! measurements, either exactly, up to tolerances `ε_n` (when test functions
//! are approximated by weighted point evaluations), or in a penalized least
//! squares sense. Every solution lives in the span of the representers of
//! the point functionals that appear in the constraints.
//!
//! * [`kernel`]: kernels, operator pairs, Gram matrices, finite kernel
//!   expansions.
//! * [`measurements`]: test functions, quadrature pairings, point
//!   approximations of test functions and their dual-error estimates.
//! * [`problem`]: pointwise operators and assembly of the finite-dimensional
//!   constrained problems.
//! * [`solvers`]: minimum-norm equality, regularized and relaxed solvers,
//!   KKT residuals.
//! * [`experiments`]: manufactured solutions and convergence studies.
//! * [`config`]: the declarative run configuration used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod field;
pub mod kernel;
pub mod linalg;
pub mod measurements;
pub mod problem;
pub mod solvers;

pub use error::{Error, Result};
