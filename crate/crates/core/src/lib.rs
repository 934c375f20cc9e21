//! Coupling constructions and convergence diagnostics for Markov chains.
//!
//! The crate has three layers. The exact layer works on finite-state chains:
//! matrix laws, optimal transport between finitely supported measures, and
//! coupling constructions with their certificates. The Monte-Carlo layer
//! drives sampler-backed chains and a delay-equation integrator with shared
//! noise. On top of both sit diagnostics that turn either exact tables or
//! simulation estimates into supports/refutes/inconclusive verdicts with
//! explicit tolerances.

pub mod chain;
pub mod chainfile;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod measure;
pub mod metric;
pub mod ot;
pub mod sdde;
pub mod seeding;
pub mod testbed;

pub use error::{Error, Result};
