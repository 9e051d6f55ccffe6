use crate::blockmat::DenseBlock;
use crate::error::{check_len, Result};
use crate::pipeline::{backprop_vectors, EvaluationPoint, Pipeline};

/// `out[q] = Σ_i b[i] w[i + m q]`, written out directly.
fn contract(b: &[f64], w: &[f64]) -> Vec<f64> {
    let m = b.len();
    if m == 0 {
        return Vec::new();
    }
    w.chunks(m)
        .map(|chunk| chunk.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect()
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Hessian-vector product by a forward tangent sweep followed by a second
/// reverse sweep, layer by layer. Shares nothing with the structured operator
/// beyond the per-layer derivative oracles.
pub fn hvp_pearlmutter(p: &Pipeline, pt: &EvaluationPoint, v: &[f64]) -> Result<Vec<f64>> {
    check_len("hvp_pearlmutter", p.total_params(), v.len())?;
    let derivs = p.derivatives(pt)?;
    let n = derivs.len();
    let vs = p.split_params(v)?;
    let jz: Vec<&DenseBlock> = derivs.iter().map(|d| &d.jac_z).collect();
    let b = backprop_vectors(&jz)?;

    // tangent[l] is the directional derivative of the input to layer l.
    let mut tangent = Vec::with_capacity(n + 1);
    tangent.push(vec![0.0; p.activation_dims()[0]]);
    for (l, d) in derivs.iter().enumerate() {
        let mut t = d.jac_z.matvec(&tangent[l])?;
        add(&mut t, &d.jac_x.matvec(&vs[l])?);
        tangent.push(t);
    }

    // adj[l] is the directional derivative of b_l.
    let mut adj = vec![Vec::new(); n];
    adj[n - 1] = vec![0.0];
    for l in (0..n - 1).rev() {
        let next = &derivs[l + 1];
        let mut w = next.hess_zz.matvec(&tangent[l + 1])?;
        add(&mut w, &next.hess_xz.matvec(&vs[l + 1])?);
        let mut a = next.jac_z.matvec_t(&adj[l + 1])?;
        add(&mut a, &contract(&b[l + 1], &w));
        adj[l] = a;
    }

    let mut out = Vec::with_capacity(v.len());
    for (l, d) in derivs.iter().enumerate() {
        let mut w = d.hess_zx.matvec(&tangent[l])?;
        add(&mut w, &d.hess_xx.matvec(&vs[l])?);
        let mut o = d.jac_x.matvec_t(&adj[l])?;
        add(&mut o, &contract(&b[l], &w));
        out.extend(o);
    }
    Ok(out)
}
