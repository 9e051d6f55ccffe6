//! Solving `(H + εI) x = b` through the lifted block-tridiagonal system, and a
//! conjugate gradient baseline over matrix-free products.

mod lifted;

pub use lifted::{lift, unpivot_extract, LiftedSystem, GROUP_ADJOINT, GROUP_PARAMS, GROUP_TANGENT};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blockmat::{
    axpy, dot, norm2, CommutationPermutation, LduFactorization, DEFAULT_PIVOT_TOLERANCE,
};
use crate::counters;
use crate::error::{check_len, Error, Result};
use crate::hessian::HessianOperator;
use crate::pipeline::{EvaluationPoint, Pipeline};

/// Version of the serialized [`SolveReport`] layout.
pub const REPORT_VERSION: u32 = 1;

/// Pivot blocks with a 1-norm condition above this are flagged in the report.
pub const CONDITION_WARNING: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative pivot threshold for the block LU factorizations.
    pub pivot_tolerance: f64,
    /// Apply one correction step: re-solve for the recomputed residual
    /// through the existing factorization.
    pub refine: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            pivot_tolerance: DEFAULT_PIVOT_TOLERANCE,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Hivp,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub version: u32,
    pub method: SolveMethod,
    pub solution: Vec<f64>,
    /// `‖(H + εI) x - b‖`, recomputed with the matrix-free product.
    pub residual: f64,
    /// `residual / (1 + ‖b‖)`.
    pub relative_residual: f64,
    pub eps: f64,
    /// CG iterations, or the number of correction steps for the direct solve.
    pub iterations: usize,
    /// 1-norm condition of each pivot block (direct solve only).
    pub pivot_conditions: Vec<f64>,
    pub warnings: Vec<String>,
    pub wall_time_secs: f64,
    pub flops: u64,
    pub peak_bytes: u64,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `‖(H + εI) x - b‖` through the matrix-free product.
pub fn damped_residual(op: &HessianOperator, x: &[f64], b: &[f64], eps: f64) -> Result<f64> {
    check_len("damped_residual", op.dim(), b.len())?;
    let mut r = op.apply(x)?;
    for ((ri, xi), bi) in r.iter_mut().zip(x).zip(b) {
        *ri += eps * xi - bi;
    }
    Ok(norm2(&r))
}

/// A factorized lifted system, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct HivpFactorization {
    pi: CommutationPermutation,
    ldu: LduFactorization,
    eps: f64,
    pivot_conditions: Vec<f64>,
}

impl HivpFactorization {
    /// Lifts, pivots and block-LDU factorizes `H + εI`.
    pub fn new(op: &HessianOperator, eps: f64, opts: &SolveOptions) -> Result<Self> {
        let system = lift(op, eps, &vec![0.0; op.dim()])?;
        let tri = system.pivot()?;
        let ldu = tri.factorize(opts.pivot_tolerance)?;
        let pivot_conditions = ldu.pivot_conditions();
        Ok(Self {
            pi: system.permutation().clone(),
            ldu,
            eps,
            pivot_conditions,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn pivot_conditions(&self) -> &[f64] {
        &self.pivot_conditions
    }

    pub fn factorization(&self) -> &LduFactorization {
        &self.ldu
    }

    pub fn permutation(&self) -> &CommutationPermutation {
        &self.pi
    }

    /// Solves for one right-hand side; takes `&self` so a single
    /// factorization can serve several threads.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.pi.group_dims()[GROUP_PARAMS];
        check_len("HivpFactorization::solve", n, b.len())?;
        let mut rhs = b.to_vec();
        rhs.resize(self.pi.len(), 0.0);
        let permuted = self.pi.apply(&rhs)?;
        let solved = self.ldu.solve(&permuted)?;
        unpivot_extract(&solved, &self.pi)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.pivot_conditions
            .iter()
            .enumerate()
            .filter(|(_, c)| !(**c <= CONDITION_WARNING))
            .map(|(i, c)| {
                format!("pivot block {i} has condition {c:.3e} above {CONDITION_WARNING:.0e}")
            })
            .collect()
    }
}

/// Direct solve of `(H + εI) x = b` at the evaluation point `pt`.
pub fn hivp_solve(p: &Pipeline, pt: &EvaluationPoint, b: &[f64], eps: f64) -> Result<SolveReport> {
    hivp_solve_with(p, pt, b, eps, &SolveOptions::default())
}

pub fn hivp_solve_with(
    p: &Pipeline,
    pt: &EvaluationPoint,
    b: &[f64],
    eps: f64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let (result, usage) = counters::measure(|| -> Result<_> {
        let op = HessianOperator::assemble(p, pt)?;
        let (x, fact, steps) = direct_solve(&op, b, eps, opts)?;
        Ok((op, x, fact, steps))
    });
    let (op, x, fact, steps) = result?;
    let wall = start.elapsed().as_secs_f64();
    finish(
        &op,
        x,
        b,
        eps,
        SolveMethod::Hivp,
        steps,
        fact.pivot_conditions().to_vec(),
        fact.warnings(),
        wall,
        usage,
    )
}

/// Direct solve against an already assembled operator.
pub fn hivp_solve_operator(
    op: &HessianOperator,
    b: &[f64],
    eps: f64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let (result, usage) = counters::measure(|| direct_solve(op, b, eps, opts));
    let (x, fact, steps) = result?;
    let wall = start.elapsed().as_secs_f64();
    finish(
        op,
        x,
        b,
        eps,
        SolveMethod::Hivp,
        steps,
        fact.pivot_conditions().to_vec(),
        fact.warnings(),
        wall,
        usage,
    )
}

fn direct_solve(
    op: &HessianOperator,
    b: &[f64],
    eps: f64,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, HivpFactorization, usize)> {
    check_len("hivp_solve right-hand side", op.dim(), b.len())?;
    let fact = HivpFactorization::new(op, eps, opts)?;
    let mut x = fact.solve(b)?;
    let mut steps = 0;
    if opts.refine {
        let mut r = op.apply(&x)?;
        for ((ri, xi), bi) in r.iter_mut().zip(&x).zip(b) {
            *ri = bi - (*ri + eps * xi);
        }
        let dx = fact.solve(&r)?;
        axpy(1.0, &dx, &mut x);
        steps = 1;
    }
    Ok((x, fact, steps))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    op: &HessianOperator,
    x: Vec<f64>,
    b: &[f64],
    eps: f64,
    method: SolveMethod,
    iterations: usize,
    pivot_conditions: Vec<f64>,
    warnings: Vec<String>,
    wall: f64,
    usage: counters::Usage,
) -> Result<SolveReport> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solution"));
    }
    let residual = damped_residual(op, &x, b, eps)?;
    Ok(SolveReport {
        version: REPORT_VERSION,
        method,
        relative_residual: residual / (1.0 + norm2(b)),
        solution: x,
        residual,
        eps,
        iterations,
        pivot_conditions,
        warnings,
        wall_time_secs: wall,
        flops: usage.flops,
        peak_bytes: usage.peak_bytes,
    })
}

/// Unpreconditioned conjugate gradient on `v ↦ H v + ε v`. Stops once the
/// recursive residual falls to `tol · ‖b‖`.
pub fn cg_solve(
    op: &HessianOperator,
    b: &[f64],
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    check_len("cg_solve right-hand side", op.dim(), b.len())?;
    let start = Instant::now();
    let (result, usage) = counters::measure(|| -> Result<(Vec<f64>, usize)> {
        let n = op.dim();
        let mut x = vec![0.0; n];
        let b_norm = norm2(b);
        if b_norm == 0.0 {
            return Ok((x, 0));
        }
        let target = tol * b_norm;
        let mut r = b.to_vec();
        let mut d = r.clone();
        let mut rr = dot(&r, &r);
        let mut ws = op.workspace();
        let mut q = vec![0.0; n];
        for it in 1..=max_iter {
            op.hvp_into(&d, &mut ws, &mut q)?;
            axpy(eps, &d, &mut q);
            let dq = dot(&d, &q);
            if !(dq.is_finite() && dq != 0.0) {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: rr.sqrt(),
                });
            }
            let alpha = rr / dq;
            axpy(alpha, &d, &mut x);
            axpy(-alpha, &q, &mut r);
            let rr_next = dot(&r, &r);
            if rr_next.sqrt() <= target {
                return Ok((x, it));
            }
            let beta = rr_next / rr;
            for (di, ri) in d.iter_mut().zip(&r) {
                *di = ri + beta * *di;
            }
            rr = rr_next;
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: rr.sqrt(),
        })
    });
    let (x, iterations) = result?;
    let wall = start.elapsed().as_secs_f64();
    finish(
        op,
        x,
        b,
        eps,
        SolveMethod::Cg,
        iterations,
        Vec::new(),
        Vec::new(),
        wall,
        usage,
    )
}
