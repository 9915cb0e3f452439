//! Experiment configs, the parallel runner, CSV/JSON/SVG output and the
//! acceptance suite.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod plot;
pub mod results;
pub mod runner;

#[cfg(test)]
mod tests;
