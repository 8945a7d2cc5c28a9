//! Iterative probabilistic domain decomposition for linear elliptic Dirichlet problems.
//!
//! Pointwise values of the solution on interfaces are computed by Monte Carlo
//! simulation of the Feynman–Kac representation, interpolated along each interface,
//! and used as Dirichlet data for independent finite-difference solves on each strip.
//! Coarse solutions feed pathwise control variates to finer levels, and a fitted cost
//! model chooses the cascade of tolerances.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cli;
pub mod config;
pub mod error;
pub mod error_analysis;
pub mod fitting;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod nodal;
pub mod orchestrator;
pub mod problem;
pub mod scheduler;
pub mod sde;
pub mod stats;
pub mod subdomain;

pub use error::{PddError, Result};
