//! The layered network model.
//!
//! A pipeline is `z_l = f_l(z_{l-1}; x_l)` for `l = 1..L`, where `z_0` is the
//! input (labels included) and the scalar `z_L` is the loss. Each layer exposes
//! its value and six derivative blocks ([`LayerDerivatives`]).

mod fd;
mod layers;
mod random;
mod spec;

use std::fmt::Debug;
use std::sync::Arc;

pub use fd::{finite_diff_gradient, finite_diff_layer_derivatives, FdSteps};
pub use layers::{
    Activation, AffineLayer, DenseLayer, ProjectedLayer, QuadraticLayer, SquaredLossLayer,
};
pub use random::{random_spec, LayerMix, RandomPipelineConfig};
pub use spec::{LayerSpec, PipelineInstance, PipelineSpec, SPEC_VERSION};

use crate::blockmat::DenseBlock;
use crate::error::{check_len, Error, Result};

/// First and second derivatives of one layer `f(z; x)` with output dim `a`,
/// input dim `n` and parameter dim `p`.
///
/// Second-order blocks follow the vec convention `∇_{yz} g = ∇_y ∇_z g`: rows
/// index `vec` of the first-derivative matrix (output index fastest), columns
/// the differentiated variable.
#[derive(Debug, Clone)]
pub struct LayerDerivatives {
    /// `∇_x f`, `a × p`.
    pub jac_x: DenseBlock,
    /// `∇_z f`, `a × n`.
    pub jac_z: DenseBlock,
    /// `∇_x ∇_x f`, `ap × p`; entry `[(i, q), r] = ∂²f_i / ∂x_q ∂x_r`.
    pub hess_xx: DenseBlock,
    /// `∇_z ∇_x f`, `ap × n`; entry `[(i, q), r] = ∂²f_i / ∂z_r ∂x_q`.
    pub hess_zx: DenseBlock,
    /// `∇_x ∇_z f`, `an × p`; entry `[(i, r), q] = ∂²f_i / ∂x_q ∂z_r`.
    pub hess_xz: DenseBlock,
    /// `∇_z ∇_z f`, `an × n`; entry `[(i, r), s] = ∂²f_i / ∂z_r ∂z_s`.
    pub hess_zz: DenseBlock,
}

impl LayerDerivatives {
    pub fn zeros(output: usize, input: usize, params: usize) -> Self {
        Self {
            jac_x: DenseBlock::zeros(output, params),
            jac_z: DenseBlock::zeros(output, input),
            hess_xx: DenseBlock::zeros(output * params, params),
            hess_zx: DenseBlock::zeros(output * params, input),
            hess_xz: DenseBlock::zeros(output * input, params),
            hess_zz: DenseBlock::zeros(output * input, input),
        }
    }

    pub fn check_shapes(&self, output: usize, input: usize, params: usize) -> Result<()> {
        let expect = [
            (&self.jac_x, output, params),
            (&self.jac_z, output, input),
            (&self.hess_xx, output * params, params),
            (&self.hess_zx, output * params, input),
            (&self.hess_xz, output * input, params),
            (&self.hess_zz, output * input, input),
        ];
        for (block, r, c) in expect {
            check_len("LayerDerivatives rows", r, block.rows())?;
            check_len("LayerDerivatives cols", c, block.cols())?;
        }
        Ok(())
    }

    pub fn blocks(&self) -> [(&'static str, &DenseBlock); 6] {
        [
            ("jac_x", &self.jac_x),
            ("jac_z", &self.jac_z),
            ("hess_xx", &self.hess_xx),
            ("hess_zx", &self.hess_zx),
            ("hess_xz", &self.hess_xz),
            ("hess_zz", &self.hess_zz),
        ]
    }

    /// `hess_zx` rebuilt from `hess_xz` by re-indexing; equal to `hess_zx`
    /// whenever mixed partials commute.
    pub fn hess_zx_from_xz(&self) -> DenseBlock {
        let a = self.jac_x.rows();
        let p = self.jac_x.cols();
        let n = self.jac_z.cols();
        DenseBlock::from_fn(a * p, n, |row, r| {
            let (i, q) = (row % a, row / a);
            self.hess_xz[(i + a * r, q)]
        })
    }

    /// Largest entrywise difference scaled by `1 + max|other|`, per block.
    pub fn max_scaled_diff(&self, other: &LayerDerivatives) -> f64 {
        self.blocks()
            .iter()
            .zip(other.blocks().iter())
            .map(|((_, a), (_, b))| {
                let diff = a
                    .as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
                diff / (1.0 + b.max_abs())
            })
            .fold(0.0, f64::max)
    }
}

/// One differentiable stage `z_out = f(z_in; x)`.
///
/// Implementations must be smooth (twice continuously differentiable) and
/// deterministic.
pub trait Layer: Debug + Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64>;
    fn derivatives(&self, z: &[f64], x: &[f64]) -> LayerDerivatives;

    /// `(∇_z f, ∇_x f)`; override when cheaper than the full oracle.
    fn jacobians(&self, z: &[f64], x: &[f64]) -> (DenseBlock, DenseBlock) {
        let d = self.derivatives(z, x);
        (d.jac_z, d.jac_x)
    }

    fn kind(&self) -> &'static str;
}

/// A chain of layers whose last output is the scalar loss.
#[derive(Debug, Clone)]
pub struct Pipeline {
    layers: Vec<Arc<dyn Layer>>,
}

impl Pipeline {
    pub fn new(layers: Vec<Arc<dyn Layer>>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidPipeline(
                "a pipeline needs at least one layer".into(),
            ));
        };
        if last.output_dim() != 1 {
            return Err(Error::InvalidPipeline(format!(
                "last layer must output a scalar loss, outputs {}",
                last.output_dim()
            )));
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::InvalidPipeline(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    l,
                    w[0].output_dim(),
                    l + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Arc<dyn Layer>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &dyn Layer {
        self.layers[l].as_ref()
    }

    /// `a_0, .., a_L`.
    pub fn activation_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].input_dim())
            .chain(self.layers.iter().map(|l| l.output_dim()))
            .collect()
    }

    /// `p_1, .., p_L`.
    pub fn param_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.param_dim()).collect()
    }

    pub fn total_params(&self) -> usize {
        self.param_dims().iter().sum()
    }

    /// Splits a flat parameter vector into per-layer vectors.
    pub fn split_params(&self, flat: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len("Pipeline::split_params", self.total_params(), flat.len())?;
        let mut out = Vec::with_capacity(self.len());
        let mut at = 0;
        for p in self.param_dims() {
            out.push(flat[at..at + p].to_vec());
            at += p;
        }
        Ok(out)
    }

    /// Runs the pipeline and caches every activation.
    pub fn forward(&self, z0: &[f64], params: &[Vec<f64>]) -> Result<EvaluationPoint> {
        check_len("Pipeline::forward layer count", self.len(), params.len())?;
        check_len(
            "Pipeline::forward input",
            self.layers[0].input_dim(),
            z0.len(),
        )?;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.len());
        for (l, (layer, x)) in self.layers.iter().zip(params).enumerate() {
            check_len("Pipeline::forward parameters", layer.param_dim(), x.len())?;
            let input = if l == 0 { z0 } else { &activations[l - 1] };
            let z = layer.eval(input, x);
            check_len(
                "Pipeline::forward layer output",
                layer.output_dim(),
                z.len(),
            )?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("forward activation"));
            }
            activations.push(z);
        }
        Ok(EvaluationPoint {
            z0: z0.to_vec(),
            params: params.to_vec(),
            activations,
        })
    }

    pub fn forward_flat(&self, z0: &[f64], flat: &[f64]) -> Result<EvaluationPoint> {
        self.forward(z0, &self.split_params(flat)?)
    }

    /// Per-layer derivative oracles at `pt`, with shapes checked.
    pub fn derivatives(&self, pt: &EvaluationPoint) -> Result<Vec<LayerDerivatives>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let d = layer.derivatives(pt.input(l), &pt.params[l]);
                d.check_shapes(layer.output_dim(), layer.input_dim(), layer.param_dim())?;
                Ok(d)
            })
            .collect()
    }
}

/// A forward pass: input, parameters and cached activations `z_1..z_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPoint {
    pub z0: Vec<f64>,
    pub params: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl EvaluationPoint {
    /// Input of layer `l` (0-based): `z0` for the first layer.
    pub fn input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.z0
        } else {
            &self.activations[l - 1]
        }
    }

    pub fn loss(&self) -> f64 {
        self.activations.last().map_or(f64::NAN, |z| z[0])
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.concat()
    }
}

/// Backprop row vectors `b_l = ∂z_L/∂z_l` from `b_L = 1` and
/// `b_l = b_{l+1} ∇_z f_{l+1}`, stored as flat vectors.
pub fn backprop_vectors(jac_z: &[&DenseBlock]) -> Result<Vec<Vec<f64>>> {
    let n = jac_z.len();
    let mut b = vec![Vec::new(); n];
    b[n - 1] = vec![1.0];
    for l in (0..n - 1).rev() {
        b[l] = jac_z[l + 1].matvec_t(&b[l + 1])?;
    }
    Ok(b)
}

/// Gradient of the loss with respect to all parameters, laid out layer by layer.
pub fn gradient(p: &Pipeline, pt: &EvaluationPoint) -> Result<Vec<f64>> {
    let jacs: Vec<(DenseBlock, DenseBlock)> = p
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| layer.jacobians(pt.input(l), &pt.params[l]))
        .collect();
    let jz: Vec<&DenseBlock> = jacs.iter().map(|(z, _)| z).collect();
    let b = backprop_vectors(&jz)?;
    let mut g = Vec::with_capacity(p.total_params());
    for ((_, jx), bl) in jacs.iter().zip(&b) {
        g.extend(jx.matvec_t(bl)?);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(z; x) = x z` on scalars.
    #[derive(Debug)]
    struct Scale;

    impl Layer for Scale {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
            vec![x[0] * z[0]]
        }
        fn derivatives(&self, z: &[f64], x: &[f64]) -> LayerDerivatives {
            let mut d = LayerDerivatives::zeros(1, 1, 1);
            d.jac_x[(0, 0)] = z[0];
            d.jac_z[(0, 0)] = x[0];
            d.hess_zx[(0, 0)] = 1.0;
            d.hess_xz[(0, 0)] = 1.0;
            d
        }
        fn kind(&self) -> &'static str {
            "scale"
        }
    }

    #[test]
    fn scalar_scale_forward() {
        let p = Pipeline::new(vec![Arc::new(Scale)]).unwrap();
        let pt = p.forward(&[3.0], &[vec![2.0]]).unwrap();
        assert_eq!(pt.loss(), 6.0);
        assert_eq!(gradient(&p, &pt).unwrap(), vec![3.0]);
    }

    #[test]
    fn stacked_scales_chain_rule() {
        let p = Pipeline::new(vec![Arc::new(Scale), Arc::new(Scale), Arc::new(Scale)]).unwrap();
        let pt = p
            .forward(&[2.0], &[vec![3.0], vec![5.0], vec![7.0]])
            .unwrap();
        assert_eq!(pt.loss(), 210.0);
        assert_eq!(gradient(&p, &pt).unwrap(), vec![70.0, 42.0, 30.0]);
    }

    #[test]
    fn rejects_bad_pipelines() {
        assert!(Pipeline::new(vec![]).is_err());
        let dense = DenseLayer::new(Activation::Tanh, 2, 3, 0);
        assert!(Pipeline::new(vec![Arc::new(dense)]).is_err());
        let p = Pipeline::new(vec![Arc::new(Scale)]).unwrap();
        assert!(matches!(
            p.forward(&[1.0, 2.0], &[vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(
            p.forward(&[f64::INFINITY], &[vec![1.0]]).unwrap_err(),
            Error::NonFinite("forward activation")
        );
    }

    #[test]
    fn identity_layers_reproduce_loss() {
        let eye = AffineLayer::new(DenseBlock::identity(2), DenseBlock::zeros(2, 0)).unwrap();
        let loss = SquaredLossLayer::new(1, 1);
        let z0 = [0.3, -0.4];
        let loss_params = vec![2.0, 0.5];
        let alone = Pipeline::new(vec![Arc::new(loss.clone())]).unwrap();
        let expected = alone.forward(&z0, &[loss_params.clone()]).unwrap().loss();
        let stacked =
            Pipeline::new(vec![Arc::new(eye.clone()), Arc::new(eye), Arc::new(loss)]).unwrap();
        let pt = stacked
            .forward(&z0, &[vec![], vec![], loss_params])
            .unwrap();
        assert_eq!(pt.loss(), expected);
    }
}
