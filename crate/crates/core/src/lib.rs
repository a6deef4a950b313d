//! Adaptive stochastic gradient optimization on the Stiefel and Grassmann
//! manifolds, with PCA, joint-diagonalization ICA, and low-rank matrix
//! completion problems and a batch-experiment harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod manifold;
pub mod optim;
pub mod problems;

pub use error::{Error, Result};
