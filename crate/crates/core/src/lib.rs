//! Exact second-order products for layered pipelines.
//!
//! A pipeline `z_l = f_l(z_{l-1}; x_l)` ending in a scalar loss has a Hessian
//! (with respect to the stacked parameters) that is a quadratic matrix
//! polynomial in the inverse of a block lower-bidiagonal "backprop" matrix.
//! This crate evaluates that polynomial matrix-free (Hessian-vector products)
//! and solves `(H + eps I) x = b` by lifting it into a sparse augmented system,
//! permuting it to block-tridiagonal form and running a block LDU solve. Both
//! cost time and storage linear in the depth of the pipeline.
//!
//! Modules:
//! - [`blockmat`]: dense blocks and the structured block-matrix kernels.
//! - [`pipeline`]: layers, forward pass, gradient and finite-difference oracles.
//! - [`hessian`]: the structured Hessian operator, its HVP and the Pearlmutter recursion.
//! - [`solver`]: the lifted system, the block-tridiagonal HIVP solve and a CG baseline.
//! - [`counters`]: per-thread flop and block-storage counters.

pub mod blockmat;
pub mod counters;
pub mod error;
pub mod hessian;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
