//! Sparse autoencoders seen as piecewise-affine splines.

pub mod baselines;
pub mod combinatorics;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod numerics;
pub mod par;
pub mod sae;
pub mod trainer;
pub mod svg;

pub use error::{Error, Result};
