//! Laplace exponents of Galton-Watson processes in varying environment, the
//! backwards integral equation of their scaling limits, closed forms for the
//! Feller case and Monte Carlo cross-checks.

pub mod cli;
pub mod discrete_laplace;
pub mod environment;
pub mod error;
pub mod feller_csbp;
pub mod limit_solver;
pub mod measures;
pub mod montecarlo;
pub mod quad;
pub mod scenarios;

pub use error::{Error, Result};
