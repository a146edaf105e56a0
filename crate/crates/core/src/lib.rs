//! Numerical toolkit for mass generation in the large-N two-dimensional nonlinear σ-model.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod covariance;
pub mod error;
pub mod expansion;
pub mod kernels;
pub mod model;
pub mod operators;
pub mod quad;
pub mod regions;
pub mod results;
pub mod twopoint;

pub use error::{Error, Result};
