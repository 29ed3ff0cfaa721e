//! Discrete-time Markovian agents interacting through a potential field:
//! the N-agent system, its mean-field limit, and a Gaussian-mixture
//! particle scheme, with numerical checks of their contraction and
//! convergence properties.

pub mod agents;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod kernels;
pub mod measures;
pub mod meanfield;
pub mod metropolis;
pub mod operators;
pub mod scheme;

pub use error::{Error, Result};
