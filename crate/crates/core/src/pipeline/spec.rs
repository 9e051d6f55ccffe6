//! Versioned JSON description of a pipeline and its evaluation point.
//!
//! ```json
//! {
//!   "version": 1,
//!   "input": [0.1, -0.4, 1.0],
//!   "layers": [
//!     {"kind": "dense", "activation": "tanh", "in_features": 2, "out_features": 2, "labels": 1, "seed": 3},
//!     {"kind": "squared_loss", "in_features": 2, "labels": 1, "params": [0.5, -0.2, 0.1]}
//!   ]
//! }
//! ```
//!
//! Every layer takes either explicit `params` or a `seed` from which its
//! parameters (and any fixed matrices not given explicitly) are drawn
//! uniformly from `[-s, s]` with `s = 1/sqrt(fan_in)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Activation, AffineLayer, DenseLayer, EvaluationPoint, Layer, Pipeline, ProjectedLayer,
    QuadraticLayer, SquaredLossLayer,
};
use crate::blockmat::DenseBlock;
use crate::error::{Error, Result};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub version: u32,
    /// `z_0`, labels included.
    pub input: Vec<f64>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        activation: Activation,
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        labels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Projected {
        activation: Activation,
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        labels: usize,
        param_dim: usize,
        /// Row-major `out_features × in_features`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mix: Option<Vec<Vec<f64>>>,
        /// Row-major `out_features × param_dim`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proj: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    SquaredLoss {
        in_features: usize,
        labels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Quadratic {
        input_dim: usize,
        /// Row-major `A`; only its symmetric part matters.
        hessian: Vec<Vec<f64>>,
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Affine {
        /// Row-major `output × input`.
        a: Vec<Vec<f64>>,
        /// Row-major `output × params`.
        b: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
}

pub(crate) fn uniform_rows(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Vec<Vec<f64>> {
    (0..rows).map(|_| uniform_vec(rng, cols, scale)).collect()
}

pub(crate) fn fan_in_scale(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

fn matrix(rows: &[Vec<f64>], expect: (usize, usize), what: &str) -> Result<DenseBlock> {
    let m = if rows.is_empty() {
        DenseBlock::zeros(0, 0)
    } else {
        DenseBlock::from_rows(rows)
            .map_err(|_| Error::InvalidSpec(format!("{what}: ragged rows")))?
    };
    if m.shape() != expect && !(rows.is_empty() && expect.0 == 0) {
        return Err(Error::InvalidSpec(format!(
            "{what}: expected {}x{}, got {}x{}",
            expect.0,
            expect.1,
            m.rows(),
            m.cols()
        )));
    }
    Ok(if rows.is_empty() {
        DenseBlock::zeros(expect.0, expect.1)
    } else {
        m
    })
}

fn resolve_params(
    params: &Option<Vec<f64>>,
    rng: &mut Option<ChaCha8Rng>,
    n: usize,
    scale: f64,
    layer: usize,
) -> Result<Vec<f64>> {
    match (params, rng) {
        (Some(p), _) if p.len() == n => Ok(p.clone()),
        (Some(p), _) => Err(Error::InvalidSpec(format!(
            "layer {layer}: expected {n} parameters, got {}",
            p.len()
        ))),
        (None, Some(rng)) => Ok(uniform_vec(rng, n, scale)),
        (None, None) => Err(Error::InvalidSpec(format!(
            "layer {layer}: needs either `params` or `seed`"
        ))),
    }
}

/// A pipeline with the evaluation point its specification describes.
#[derive(Debug, Clone)]
pub struct PipelineInstance {
    pub pipeline: Pipeline,
    pub z0: Vec<f64>,
    pub params: Vec<Vec<f64>>,
}

impl PipelineInstance {
    pub fn evaluate(&self) -> Result<EvaluationPoint> {
        self.pipeline.forward(&self.z0, &self.params)
    }
}

impl LayerSpec {
    fn seed(&self) -> Option<u64> {
        match self {
            LayerSpec::Dense { seed, .. }
            | LayerSpec::Projected { seed, .. }
            | LayerSpec::SquaredLoss { seed, .. }
            | LayerSpec::Quadratic { seed, .. }
            | LayerSpec::Affine { seed, .. } => *seed,
        }
    }

    fn build(&self, index: usize) -> Result<(Arc<dyn Layer>, Vec<f64>)> {
        let mut rng = self.seed().map(ChaCha8Rng::seed_from_u64);
        Ok(match self {
            LayerSpec::Dense {
                activation,
                in_features,
                out_features,
                labels,
                params,
                ..
            } => {
                let layer = DenseLayer::new(*activation, *in_features, *out_features, *labels);
                let x = resolve_params(
                    params,
                    &mut rng,
                    layer.param_dim(),
                    fan_in_scale(*in_features),
                    index,
                )?;
                (Arc::new(layer), x)
            }
            LayerSpec::Projected {
                activation,
                in_features,
                out_features,
                labels,
                param_dim,
                mix,
                proj,
                bias,
                params,
                ..
            } => {
                let (m, n, p) = (*out_features, *in_features, *param_dim);
                let mut fixed = |given: &Option<Vec<Vec<f64>>>,
                                 rows,
                                 cols,
                                 scale,
                                 what|
                 -> Result<DenseBlock> {
                    match (given, rng.as_mut()) {
                        (Some(g), _) => matrix(g, (rows, cols), what),
                        (None, Some(r)) => {
                            DenseBlock::from_rows(&uniform_rows(r, rows, cols, scale))
                                .or_else(|_| Ok(DenseBlock::zeros(rows, cols)))
                        }
                        (None, None) => Err(Error::InvalidSpec(format!(
                            "layer {index}: `{what}` missing and no seed"
                        ))),
                    }
                };
                let mix = fixed(mix, m, n, fan_in_scale(n), "mix")?;
                let proj = fixed(proj, m, p, fan_in_scale(p), "proj")?;
                let bias = match (bias, rng.as_mut()) {
                    (Some(b), _) => b.clone(),
                    (None, Some(r)) => uniform_vec(r, m, fan_in_scale(n)),
                    (None, None) => vec![0.0; m],
                };
                let layer = ProjectedLayer::new(*activation, *labels, mix, proj, bias)
                    .map_err(|e| Error::InvalidSpec(format!("layer {index}: {e}")))?;
                let x = resolve_params(params, &mut rng, p, 1.0, index)?;
                (Arc::new(layer), x)
            }
            LayerSpec::SquaredLoss {
                in_features,
                labels,
                params,
                ..
            } => {
                let layer = SquaredLossLayer::new(*in_features, *labels);
                let x = resolve_params(
                    params,
                    &mut rng,
                    layer.param_dim(),
                    fan_in_scale(*in_features),
                    index,
                )?;
                (Arc::new(layer), x)
            }
            LayerSpec::Quadratic {
                input_dim,
                hessian,
                center,
                params,
                ..
            } => {
                let p = center.len();
                let a = matrix(hessian, (p, p), "hessian")?;
                let layer = QuadraticLayer::new(*input_dim, &a, center.clone())
                    .map_err(|e| Error::InvalidSpec(format!("layer {index}: {e}")))?;
                let x = resolve_params(params, &mut rng, p, 1.0, index)?;
                (Arc::new(layer), x)
            }
            LayerSpec::Affine { a, b, params, .. } => {
                let rows = a.len();
                let a = DenseBlock::from_rows(a)
                    .map_err(|e| Error::InvalidSpec(format!("layer {index}: {e}")))?;
                let b = if b.is_empty() {
                    DenseBlock::zeros(rows, 0)
                } else {
                    DenseBlock::from_rows(b)
                        .map_err(|e| Error::InvalidSpec(format!("layer {index}: {e}")))?
                };
                let layer = AffineLayer::new(a, b)
                    .map_err(|e| Error::InvalidSpec(format!("layer {index}: {e}")))?;
                let x = resolve_params(params, &mut rng, layer.param_dim(), 1.0, index)?;
                (Arc::new(layer), x)
            }
        })
    }
}

impl PipelineSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if spec.version != SPEC_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported version {} (expected {SPEC_VERSION})",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn build(&self) -> Result<PipelineInstance> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.layers.len());
        for (l, ls) in self.layers.iter().enumerate() {
            let (layer, x) = ls.build(l)?;
            layers.push(layer);
            params.push(x);
        }
        let pipeline = Pipeline::new(layers).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if pipeline.layer(0).input_dim() != self.input.len() {
            return Err(Error::InvalidSpec(format!(
                "input has {} values but the first layer expects {}",
                self.input.len(),
                pipeline.layer(0).input_dim()
            )));
        }
        Ok(PipelineInstance {
            pipeline,
            z0: self.input.clone(),
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
      "version": 1,
      "input": [0.1, -0.4, 1.0],
      "layers": [
        {"kind": "dense", "activation": "tanh", "in_features": 2, "out_features": 2, "labels": 1, "seed": 3},
        {"kind": "squared_loss", "in_features": 2, "labels": 1, "params": [0.5, -0.2, 0.1]}
      ]
    }"#;

    #[test]
    fn parses_and_builds() {
        let spec = PipelineSpec::from_json(EXAMPLE).unwrap();
        let inst = spec.build().unwrap();
        assert_eq!(inst.pipeline.activation_dims(), vec![3, 3, 1]);
        assert_eq!(inst.params[1], vec![0.5, -0.2, 0.1]);
        let again = PipelineSpec::from_json(EXAMPLE).unwrap().build().unwrap();
        assert_eq!(inst.params, again.params);
        assert!(inst.evaluate().unwrap().loss().is_finite());
    }

    #[test]
    fn rejects_bad_specs() {
        let wrong_version = EXAMPLE.replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            PipelineSpec::from_json(&wrong_version),
            Err(Error::InvalidSpec(_))
        ));
        let no_params = EXAMPLE.replace(", \"seed\": 3", "");
        assert!(PipelineSpec::from_json(&no_params)
            .unwrap()
            .build()
            .is_err());
        let bad_input = EXAMPLE.replace("[0.1, -0.4, 1.0]", "[0.1]");
        assert!(PipelineSpec::from_json(&bad_input)
            .unwrap()
            .build()
            .is_err());
        assert!(PipelineSpec::from_json("{").is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = PipelineSpec::from_json(EXAMPLE).unwrap();
        assert_eq!(PipelineSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
}
