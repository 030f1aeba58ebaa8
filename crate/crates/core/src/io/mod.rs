//! File formats and run configuration for the command-line front end.

pub mod basis;
pub mod coefficients;
pub mod config;
pub mod matrix_market;
pub mod output;
