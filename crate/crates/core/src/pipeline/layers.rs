//! Shipped layers, each with analytic derivative oracles.
//!
//! Hidden layers carry a label block through unchanged, so an input
//! `(features ‖ labels)` becomes `(g(features) ‖ labels)` and the labels reach
//! the fused loss at the end of the pipeline.

use serde::{Deserialize, Serialize};

use super::{Layer, LayerDerivatives};
use crate::blockmat::DenseBlock;
use crate::error::{check_len, Result};

/// Smooth elementwise activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    /// `(σ(u), σ'(u), σ''(u))`.
    pub fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
            Activation::Softplus => {
                let s = 1.0 / (1.0 + (-u).exp());
                let v = if u > 30.0 { u } else { u.exp().ln_1p() };
                (v, s, s * (1.0 - s))
            }
        }
    }
}

/// Pre-activation `e(z, x)` that is affine in `z` and in `x` separately, with
/// constant first derivatives and (possibly) constant mixed second derivatives.
struct Preact {
    value: Vec<f64>,
    de_dz: DenseBlock,
    de_dx: DenseBlock,
    /// `(i, r, q, ∂²e_i / ∂z_r ∂x_q)`.
    mixed: Vec<(usize, usize, usize, f64)>,
}

/// Derivatives of `f = σ(e) ‖ labels`, where the label block occupies the
/// last `labels` inputs and outputs.
fn activated(act: Activation, pre: &Preact, labels: usize) -> LayerDerivatives {
    let m = pre.value.len();
    let out = m + labels;
    let n = pre.de_dz.cols();
    let p = pre.de_dx.cols();
    let mut d = LayerDerivatives::zeros(out, n, p);
    let acts: Vec<(f64, f64, f64)> = pre.value.iter().map(|&u| act.eval(u)).collect();
    for i in 0..m {
        let (_, d1, d2) = acts[i];
        for q in 0..p {
            d.jac_x[(i, q)] = d1 * pre.de_dx[(i, q)];
        }
        for r in 0..n {
            d.jac_z[(i, r)] = d1 * pre.de_dz[(i, r)];
        }
        if d2 != 0.0 {
            for q in 0..p {
                let gq = pre.de_dx[(i, q)];
                if gq == 0.0 {
                    continue;
                }
                for r in 0..p {
                    d.hess_xx[(i + out * q, r)] = d2 * gq * pre.de_dx[(i, r)];
                }
                for r in 0..n {
                    let v = d2 * pre.de_dz[(i, r)] * gq;
                    d.hess_zx[(i + out * q, r)] = v;
                    d.hess_xz[(i + out * r, q)] = v;
                }
            }
            for r in 0..n {
                let hr = pre.de_dz[(i, r)];
                if hr == 0.0 {
                    continue;
                }
                for s in 0..n {
                    d.hess_zz[(i + out * r, s)] = d2 * hr * pre.de_dz[(i, s)];
                }
            }
        }
    }
    for &(i, r, q, v) in &pre.mixed {
        let d1 = acts[i].1;
        d.hess_zx[(i + out * q, r)] += d1 * v;
        d.hess_xz[(i + out * r, q)] += d1 * v;
    }
    for k in 0..labels {
        d.jac_z[(m + k, n - labels + k)] = 1.0;
    }
    d
}

/// Derivatives of the scalar `f = ½ Σ_i e_i²`.
fn half_squared_norm(pre: &Preact) -> LayerDerivatives {
    let n = pre.de_dz.cols();
    let p = pre.de_dx.cols();
    let e = &pre.value;
    let mut d = LayerDerivatives::zeros(1, n, p);
    d.jac_x = DenseBlock::new(1, p, pre.de_dx.matvec_t(e).unwrap()).unwrap();
    d.jac_z = DenseBlock::new(1, n, pre.de_dz.matvec_t(e).unwrap()).unwrap();
    let gx = &pre.de_dx;
    let gz = &pre.de_dz;
    d.hess_xx = gx.transpose().matmul(gx).unwrap();
    d.hess_zz = gz.transpose().matmul(gz).unwrap();
    let mut zx = gx.transpose().matmul(gz).unwrap();
    for &(i, r, q, v) in &pre.mixed {
        zx[(q, r)] += e[i] * v;
    }
    d.hess_xz = zx.transpose();
    d.hess_zx = zx;
    d
}

/// `e_i = Σ_j W_ij z_j + c_i` over the first `in_features` inputs, with
/// `x = vec(W) ‖ c` (column-major `W`).
fn dense_preact(
    z: &[f64],
    x: &[f64],
    in_features: usize,
    out_features: usize,
    input_dim: usize,
) -> Preact {
    let (m, n) = (out_features, in_features);
    let w = &x[..m * n];
    let c = &x[m * n..];
    let value: Vec<f64> = (0..m)
        .map(|i| c[i] + (0..n).map(|j| w[i + m * j] * z[j]).sum::<f64>())
        .collect();
    let de_dz = DenseBlock::from_fn(m, input_dim, |i, j| if j < n { w[i + m * j] } else { 0.0 });
    let mut de_dx = DenseBlock::zeros(m, m * n + m);
    let mut mixed = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            de_dx[(i, i + m * j)] = z[j];
            mixed.push((i, j, i + m * j, 1.0));
        }
        de_dx[(i, m * n + i)] = 1.0;
    }
    Preact {
        value,
        de_dz,
        de_dx,
        mixed,
    }
}

/// `f(z; x) = σ(W z_feat + c) ‖ z_labels` with `x = vec(W) ‖ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub activation: Activation,
    pub in_features: usize,
    pub out_features: usize,
    pub labels: usize,
}

impl DenseLayer {
    pub fn new(
        activation: Activation,
        in_features: usize,
        out_features: usize,
        labels: usize,
    ) -> Self {
        Self {
            activation,
            in_features,
            out_features,
            labels,
        }
    }

    fn preact(&self, z: &[f64], x: &[f64]) -> Preact {
        dense_preact(z, x, self.in_features, self.out_features, self.input_dim())
    }
}

impl Layer for DenseLayer {
    fn input_dim(&self) -> usize {
        self.in_features + self.labels
    }

    fn output_dim(&self) -> usize {
        self.out_features + self.labels
    }

    fn param_dim(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }

    fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let pre = self.preact(z, x);
        pre.value
            .iter()
            .map(|&u| self.activation.eval(u).0)
            .chain(z[self.in_features..].iter().copied())
            .collect()
    }

    fn derivatives(&self, z: &[f64], x: &[f64]) -> LayerDerivatives {
        activated(self.activation, &self.preact(z, x), self.labels)
    }

    fn kind(&self) -> &'static str {
        "dense"
    }
}

/// `f(z; x) = σ(A z_feat + B x + c) ‖ z_labels` with fixed `A`, `B`, `c`.
///
/// The parameter count is independent of the width, which makes it the layer
/// of choice for sweeping depth at fixed `(a, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedLayer {
    pub activation: Activation,
    pub labels: usize,
    pub mix: DenseBlock,
    pub proj: DenseBlock,
    pub bias: Vec<f64>,
}

impl ProjectedLayer {
    pub fn new(
        activation: Activation,
        labels: usize,
        mix: DenseBlock,
        proj: DenseBlock,
        bias: Vec<f64>,
    ) -> Result<Self> {
        check_len("ProjectedLayer projection rows", mix.rows(), proj.rows())?;
        check_len("ProjectedLayer bias", mix.rows(), bias.len())?;
        Ok(Self {
            activation,
            labels,
            mix,
            proj,
            bias,
        })
    }

    fn preact(&self, z: &[f64], x: &[f64]) -> Preact {
        let n = self.mix.cols();
        let mut value = self.bias.clone();
        self.mix.gemv_acc(1.0, &z[..n], &mut value).unwrap();
        self.proj.gemv_acc(1.0, x, &mut value).unwrap();
        let de_dz = DenseBlock::from_fn(self.mix.rows(), self.input_dim(), |i, j| {
            if j < n {
                self.mix[(i, j)]
            } else {
                0.0
            }
        });
        Preact {
            value,
            de_dz,
            de_dx: self.proj.clone(),
            mixed: Vec::new(),
        }
    }
}

impl Layer for ProjectedLayer {
    fn input_dim(&self) -> usize {
        self.mix.cols() + self.labels
    }

    fn output_dim(&self) -> usize {
        self.mix.rows() + self.labels
    }

    fn param_dim(&self) -> usize {
        self.proj.cols()
    }

    fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let pre = self.preact(z, x);
        pre.value
            .iter()
            .map(|&u| self.activation.eval(u).0)
            .chain(z[self.mix.cols()..].iter().copied())
            .collect()
    }

    fn derivatives(&self, z: &[f64], x: &[f64]) -> LayerDerivatives {
        activated(self.activation, &self.preact(z, x), self.labels)
    }

    fn kind(&self) -> &'static str {
        "projected"
    }
}

/// Fused final layer: `f(z; x) = ½ ‖W z_feat + c - z_labels‖²` with
/// `x = vec(W) ‖ c` and `W` of shape `labels × in_features`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredLossLayer {
    pub in_features: usize,
    pub labels: usize,
}

impl SquaredLossLayer {
    pub fn new(in_features: usize, labels: usize) -> Self {
        Self {
            in_features,
            labels,
        }
    }

    fn preact(&self, z: &[f64], x: &[f64]) -> Preact {
        let mut pre = dense_preact(z, x, self.in_features, self.labels, self.input_dim());
        for k in 0..self.labels {
            pre.value[k] -= z[self.in_features + k];
            pre.de_dz[(k, self.in_features + k)] = -1.0;
        }
        pre
    }
}

impl Layer for SquaredLossLayer {
    fn input_dim(&self) -> usize {
        self.in_features + self.labels
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.labels * (self.in_features + 1)
    }

    fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let e = self.preact(z, x).value;
        vec![0.5 * e.iter().map(|v| v * v).sum::<f64>()]
    }

    fn derivatives(&self, z: &[f64], x: &[f64]) -> LayerDerivatives {
        half_squared_norm(&self.preact(z, x))
    }

    fn kind(&self) -> &'static str {
        "squared_loss"
    }
}

/// Scalar `f(z; x) = ½ (x - c)ᵀ A (x - c)`, independent of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLayer {
    pub input_dim: usize,
    /// Symmetric part of `A`.
    pub hessian: DenseBlock,
    pub center: Vec<f64>,
}

impl QuadraticLayer {
    /// Only the symmetric part `(A + Aᵀ)/2` of `a` is kept.
    pub fn new(input_dim: usize, a: &DenseBlock, center: Vec<f64>) -> Result<Self> {
        check_len("QuadraticLayer matrix", a.rows(), a.cols())?;
        check_len("QuadraticLayer center", a.rows(), center.len())?;
        let hessian = DenseBlock::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
        Ok(Self {
            input_dim,
            hessian,
            center,
        })
    }
}

impl Layer for QuadraticLayer {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, _z: &[f64], x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let ad = self.hessian.matvec(&d).unwrap();
        vec![0.5 * d.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>()]
    }

    fn derivatives(&self, _z: &[f64], x: &[f64]) -> LayerDerivatives {
        let p = self.param_dim();
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let mut out = LayerDerivatives::zeros(1, self.input_dim, p);
        out.jac_x = DenseBlock::new(1, p, self.hessian.matvec(&d).unwrap()).unwrap();
        out.hess_xx = self.hessian.clone();
        out
    }

    fn kind(&self) -> &'static str {
        "quadratic"
    }
}

/// `f(z; x) = A z + B x` (no curvature).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub a: DenseBlock,
    pub b: DenseBlock,
}

impl AffineLayer {
    pub fn new(a: DenseBlock, b: DenseBlock) -> Result<Self> {
        check_len("AffineLayer rows", a.rows(), b.rows())?;
        Ok(Self { a, b })
    }
}

impl Layer for AffineLayer {
    fn input_dim(&self) -> usize {
        self.a.cols()
    }

    fn output_dim(&self) -> usize {
        self.a.rows()
    }

    fn param_dim(&self) -> usize {
        self.b.cols()
    }

    fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = self.a.matvec(z).unwrap();
        self.b.gemv_acc(1.0, x, &mut out).unwrap();
        out
    }

    fn derivatives(&self, _z: &[f64], _x: &[f64]) -> LayerDerivatives {
        let mut d = LayerDerivatives::zeros(self.output_dim(), self.input_dim(), self.param_dim());
        d.jac_z = self.a.clone();
        d.jac_x = self.b.clone();
        d
    }

    fn kind(&self) -> &'static str {
        "affine"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{finite_diff_layer_derivatives, FdSteps};

    fn check_against_fd(layer: &dyn Layer, z: &[f64], x: &[f64]) {
        let analytic = layer.derivatives(z, x);
        analytic
            .check_shapes(layer.output_dim(), layer.input_dim(), layer.param_dim())
            .unwrap();
        let fd = finite_diff_layer_derivatives(layer, z, x, FdSteps::default());
        let err = analytic.max_scaled_diff(&fd);
        assert!(err < 1e-4, "{}: analytic vs FD {err:e}", layer.kind());
        let zx = analytic.hess_zx_from_xz();
        assert_eq!(
            zx,
            analytic.hess_zx,
            "{}: mixed partial re-indexing",
            layer.kind()
        );
    }

    #[test]
    fn activations_are_consistent() {
        for act in [Activation::Tanh, Activation::Softplus] {
            for u in [-3.0, -0.2, 0.0, 0.7, 2.5] {
                let h = 1e-5;
                let (_, d1, d2) = act.eval(u);
                let fd1 = (act.eval(u + h).0 - act.eval(u - h).0) / (2.0 * h);
                let fd2 = (act.eval(u + h).1 - act.eval(u - h).1) / (2.0 * h);
                assert!((d1 - fd1).abs() < 1e-8);
                assert!((d2 - fd2).abs() < 1e-8);
            }
        }
        assert_eq!(Activation::Softplus.eval(100.0).0, 100.0);
    }

    #[test]
    fn dense_layers_match_fd() {
        let z = [0.3, -0.7, 0.5, 1.0];
        let x: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.35).collect();
        for act in [Activation::Tanh, Activation::Softplus] {
            check_against_fd(&DenseLayer::new(act, 3, 2, 1), &z, &x);
        }
    }

    #[test]
    fn dense_passes_labels_through() {
        let layer = DenseLayer::new(Activation::Tanh, 1, 1, 2);
        let out = layer.eval(&[0.0, 4.0, 5.0], &[1.0, 0.0]);
        assert_eq!(out, vec![0.0, 4.0, 5.0]);
    }

    #[test]
    fn loss_and_projected_match_fd() {
        let z = [0.3, -0.7, 0.5, 0.2];
        let loss = SquaredLossLayer::new(2, 2);
        check_against_fd(&loss, &z, &[0.4, -0.1, 0.3, 0.9, 0.05, -0.2]);
        let proj = ProjectedLayer::new(
            Activation::Softplus,
            1,
            DenseBlock::from_rows(&[vec![0.5, -0.3, 0.8], vec![0.1, 0.2, -0.6]]).unwrap(),
            DenseBlock::from_rows(&[vec![1.0, 0.0, -0.5], vec![0.3, 0.7, 0.2]]).unwrap(),
            vec![0.1, -0.2],
        )
        .unwrap();
        check_against_fd(&proj, &[0.3, -0.7, 0.5, 2.0], &[0.2, -0.4, 0.6]);
    }

    #[test]
    fn affine_has_no_curvature() {
        let a = DenseBlock::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseBlock::from_rows(&[vec![0.5], vec![-1.0]]).unwrap();
        let layer = AffineLayer::new(a.clone(), b.clone()).unwrap();
        let fd = finite_diff_layer_derivatives(&layer, &[0.2, 0.1], &[0.7], FdSteps::default());
        for (name, block) in fd.blocks().into_iter().skip(2) {
            assert!(block.max_abs() < 1e-6, "{name}");
        }
        assert!(fd
            .jac_z
            .as_slice()
            .iter()
            .zip(a.as_slice())
            .all(|(x, y)| (x - y).abs() < 1e-9));
        assert!(fd
            .jac_x
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn quadratic_symmetrizes() {
        let a = DenseBlock::from_rows(&[vec![2.0, 1.0], vec![3.0, 4.0]]).unwrap();
        let q = QuadraticLayer::new(1, &a, vec![1.0, -1.0]).unwrap();
        assert_eq!(q.hessian.to_rows(), vec![vec![2.0, 2.0], vec![2.0, 4.0]]);
        check_against_fd(&q, &[0.0], &[0.5, 0.25]);
        assert_eq!(q.eval(&[0.0], &[1.0, -1.0]), vec![0.0]);
    }
}
