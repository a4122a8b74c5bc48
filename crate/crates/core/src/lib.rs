//! Misspecified causal models in linear-Gaussian decision problems.

pub mod belief;
pub mod dag;
pub mod equilibrium;
pub mod error;
pub mod gaussian;
pub mod montecarlo;
pub mod output;
pub mod scm;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};
