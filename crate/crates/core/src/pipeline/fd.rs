//! Central finite-difference oracles, independent of the analytic derivatives.

use super::{Layer, LayerDerivatives, Pipeline};
use crate::error::Result;

/// Steps for first-order (central) and second-order (nested central) differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub first: f64,
    pub second: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            first: 1e-4,
            second: 1e-3,
        }
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Z(usize),
    X(usize),
}

fn eval_shifted(layer: &dyn Layer, z: &[f64], x: &[f64], shifts: &[(Coord, f64)]) -> Vec<f64> {
    let mut z = z.to_vec();
    let mut x = x.to_vec();
    for &(c, h) in shifts {
        match c {
            Coord::Z(r) => z[r] += h,
            Coord::X(q) => x[q] += h,
        }
    }
    layer.eval(&z, &x)
}

fn first(layer: &dyn Layer, z: &[f64], x: &[f64], c: Coord, h: f64) -> Vec<f64> {
    let plus = eval_shifted(layer, z, x, &[(c, h)]);
    let minus = eval_shifted(layer, z, x, &[(c, -h)]);
    plus.iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect()
}

/// `∂²f / ∂a ∂b` by the four-point central stencil.
fn second(layer: &dyn Layer, z: &[f64], x: &[f64], a: Coord, b: Coord, h: f64) -> Vec<f64> {
    let pp = eval_shifted(layer, z, x, &[(a, h), (b, h)]);
    let pm = eval_shifted(layer, z, x, &[(a, h), (b, -h)]);
    let mp = eval_shifted(layer, z, x, &[(a, -h), (b, h)]);
    let mm = eval_shifted(layer, z, x, &[(a, -h), (b, -h)]);
    (0..pp.len())
        .map(|i| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h))
        .collect()
}

/// Finite-difference estimates of all six derivative blocks of `layer` at
/// `(z, x)`, in the same layout as the analytic oracle.
pub fn finite_diff_layer_derivatives(
    layer: &dyn Layer,
    z: &[f64],
    x: &[f64],
    steps: FdSteps,
) -> LayerDerivatives {
    let a = layer.output_dim();
    let n = layer.input_dim();
    let p = layer.param_dim();
    let mut d = LayerDerivatives::zeros(a, n, p);
    let h1 = steps.first;
    let h2 = steps.second;
    for q in 0..p {
        for (i, v) in first(layer, z, x, Coord::X(q), h1).into_iter().enumerate() {
            d.jac_x[(i, q)] = v;
        }
    }
    for r in 0..n {
        for (i, v) in first(layer, z, x, Coord::Z(r), h1).into_iter().enumerate() {
            d.jac_z[(i, r)] = v;
        }
    }
    for q in 0..p {
        for r in 0..p {
            for (i, v) in second(layer, z, x, Coord::X(q), Coord::X(r), h2)
                .into_iter()
                .enumerate()
            {
                d.hess_xx[(i + a * q, r)] = v;
            }
        }
    }
    // ∂/∂z_r of ∇_x f and ∂/∂x_q of ∇_z f are estimated separately.
    for q in 0..p {
        for r in 0..n {
            for (i, v) in second(layer, z, x, Coord::Z(r), Coord::X(q), h2)
                .into_iter()
                .enumerate()
            {
                d.hess_zx[(i + a * q, r)] = v;
            }
            for (i, v) in second(layer, z, x, Coord::X(q), Coord::Z(r), h2)
                .into_iter()
                .enumerate()
            {
                d.hess_xz[(i + a * r, q)] = v;
            }
        }
    }
    for r in 0..n {
        for s in 0..n {
            for (i, v) in second(layer, z, x, Coord::Z(r), Coord::Z(s), h2)
                .into_iter()
                .enumerate()
            {
                d.hess_zz[(i + a * r, s)] = v;
            }
        }
    }
    d
}

/// Central differences of the loss with respect to every parameter coordinate.
pub fn finite_diff_gradient(
    p: &Pipeline,
    z0: &[f64],
    flat_params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut x = flat_params.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + step;
        let plus = p.forward_flat(z0, &x)?.loss();
        x[k] = orig - step;
        let minus = p.forward_flat(z0, &x)?.loss();
        x[k] = orig;
        g.push((plus - minus) / (2.0 * step));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar `f(z; x) = (xᵀz)²`.
    #[derive(Debug)]
    struct SquaredInner(usize);

    impl Layer for SquaredInner {
        fn input_dim(&self) -> usize {
            self.0
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            self.0
        }
        fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
            let s: f64 = z.iter().zip(x).map(|(a, b)| a * b).sum();
            vec![s * s]
        }
        fn derivatives(&self, _z: &[f64], _x: &[f64]) -> LayerDerivatives {
            unreachable!("only the finite-difference oracle is exercised")
        }
        fn kind(&self) -> &'static str {
            "squared_inner"
        }
    }

    #[test]
    fn squared_inner_product_hand_derivatives() {
        let z = [0.5, -1.0, 2.0];
        let x = [1.5, 0.25, -0.75];
        let s: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        let fd = finite_diff_layer_derivatives(&SquaredInner(3), &z, &x, FdSteps::default());
        for q in 0..3 {
            assert!((fd.jac_x[(0, q)] - 2.0 * s * z[q]).abs() < 1e-7);
            assert!((fd.jac_z[(0, q)] - 2.0 * s * x[q]).abs() < 1e-7);
            for r in 0..3 {
                // ∂²/∂x_q∂x_r = 2 z_q z_r, ∂²/∂z_r∂z_s = 2 x_r x_s,
                // ∂²/∂z_r∂x_q = 2 x_r z_q + 2 s δ_qr.
                let delta = if q == r { 2.0 * s } else { 0.0 };
                assert!((fd.hess_xx[(q, r)] - 2.0 * z[q] * z[r]).abs() < 1e-7);
                assert!((fd.hess_zz[(q, r)] - 2.0 * x[q] * x[r]).abs() < 1e-7);
                assert!((fd.hess_zx[(q, r)] - (2.0 * x[r] * z[q] + delta)).abs() < 1e-7);
                assert!((fd.hess_xz[(r, q)] - (2.0 * x[r] * z[q] + delta)).abs() < 1e-7);
            }
        }
    }
}
