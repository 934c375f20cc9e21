//! Command-line front end for the coupling laboratory: typed experiment
//! configs, a catalog browser, and a dispatcher that writes reproducible
//! artifact directories.

pub mod config;
pub mod runner;
