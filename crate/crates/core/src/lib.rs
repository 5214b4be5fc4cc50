//! Weighted-averaging consensus over time-varying rooted digraphs, the
//! adjoint (absolute probability) sequences that make its quadratic
//! Lyapunov function exact, projected constrained consensus, and
//! per-step certificates for every rate bound.

pub mod exec;
pub mod graph;
pub mod linalg;
pub mod rng;
pub mod weights;
pub mod adjoint;
pub mod lyapunov;
pub mod sets;
pub mod engine;
pub mod report;
pub mod scenarios;
pub mod cli;
