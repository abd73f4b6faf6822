//! Data-driven stability certification for constrained switching linear
//! systems.
//!
//! The crate draws randomized observations of a switching system whose
//! switching signal is constrained by a labeled graph, solves a sampled
//! quadratic Lyapunov program, and turns its optimum into a probabilistic
//! upper bound on the constrained joint spectral radius. Model-based
//! baselines bracket the true value for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod config;
pub mod csvfmt;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod policy;
pub mod sampling;
pub mod solver;
pub mod specfun;
pub mod system;
