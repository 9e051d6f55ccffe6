//! Heterogeneous block matrices and their kernels.
//!
//! Block sizes may differ from layer to layer (the last activation of a
//! pipeline is a scalar), so every structured type carries its per-block
//! dimensions and never pads.

mod commutation;
mod dense;
mod structured;
mod tridiag;

pub use commutation::CommutationPermutation;
pub use dense::{dense_solve, DenseBlock, LuFactor, PivotFailure};
pub use structured::{
    BlockDiagonal, BlockLowerBidiagonal, BlockSparse, KronIdentityDiagonal, ShiftOperator,
};
pub use tridiag::{
    pivot_to_tridiagonal, BlockTridiagonal, LduFactorization, DEFAULT_PIVOT_TOLERANCE,
};

use crate::counters;

/// Start offsets of consecutive segments with the given lengths; has one more
/// entry than `dims` (the total length last).
pub fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    counters::add_flops(2 * a.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    counters::add_flops(2 * x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
