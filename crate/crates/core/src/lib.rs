//! Sparse channel representation and estimation for FDD massive MIMO.
//!
//! The crate simulates a single cell end to end: geometry-based stochastic
//! channel synthesis for ULA/URA arrays, sparsifying dictionaries (DFT,
//! overcomplete DFT, learned), convex sparse-recovery solvers, low-coherence
//! uplink pilot design, LS / compressed-sensing / joint uplink-downlink
//! channel estimators, and a seeded Monte-Carlo experiment harness that
//! emits CSV tables.
//!
//! Batch stages (sparse coding over a training set, Monte-Carlo trials) run
//! data-parallel on rayon when the `parallel` feature is enabled (default)
//! and fall back to sequential iteration otherwise.

pub mod channel;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod learning;
pub mod numerics;
pub mod parallel;
pub mod pilots;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use numerics::{CMat, CVec, C64};
pub use parallel::Execution;
