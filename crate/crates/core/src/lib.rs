//! Numerical laboratory for Gibbs measures of weakly interacting particle
//! systems: interaction kernels, grid-based equilibrium solvers, a
//! Metropolis sampler, and local point-process diagnostics.

pub mod analysis;
pub mod equilibrium;
pub mod error;
mod fft;
pub mod fields;
pub mod grid;
pub mod kernels;
pub mod sampler;

pub use error::{Error, Result};
