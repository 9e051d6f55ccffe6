use super::HessianOperator;
use crate::blockmat::DenseBlock;
use crate::error::{Error, Result};
use crate::pipeline::{gradient, EvaluationPoint, Pipeline};

/// Largest Hessian side length that may be materialized.
pub const DENSE_SIZE_LIMIT: usize = 2000;

/// Materializes `H` column by column through the structured product.
pub fn dense_hessian(op: &HessianOperator) -> Result<DenseBlock> {
    let n = op.dim();
    if n > DENSE_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            size: n,
            limit: DENSE_SIZE_LIMIT,
        });
    }
    let mut h = DenseBlock::zeros(n, n);
    let mut ws = op.workspace();
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        col.iter_mut().for_each(|x| *x = 0.0);
        op.hvp_into(&e, &mut ws, &mut col)?;
        h.as_mut_slice()[j * n..(j + 1) * n].copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(h)
}

/// Central differences of the analytic gradient, one column per parameter.
pub fn finite_diff_hessian(p: &Pipeline, pt: &EvaluationPoint, step: f64) -> Result<DenseBlock> {
    let n = p.total_params();
    if n > DENSE_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            size: n,
            limit: DENSE_SIZE_LIMIT,
        });
    }
    let base = pt.flat_params();
    let mut h = DenseBlock::zeros(n, n);
    let mut x = base.clone();
    for j in 0..n {
        x[j] = base[j] + step;
        let gp = gradient(p, &p.forward_flat(&pt.z0, &x)?)?;
        x[j] = base[j] - step;
        let gm = gradient(p, &p.forward_flat(&pt.z0, &x)?)?;
        x[j] = base[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok(h)
}
