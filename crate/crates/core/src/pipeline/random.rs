//! Seeded random pipelines for verification and benchmarking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{fan_in_scale, uniform_rows, uniform_vec};
use super::{Activation, LayerSpec, PipelineSpec, SPEC_VERSION};

/// Which hidden layers a random pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMix {
    /// Projected layers with exactly `width` features and `params` parameters.
    Projected,
    /// Dense layers with exactly `width` features.
    Dense,
    /// Per layer: dense or projected, tanh or softplus, widths in `1..=width`
    /// and parameter counts in `1..=params`.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomPipelineConfig {
    /// Total number of layers, the final squared loss included.
    pub layers: usize,
    pub width: usize,
    pub params: usize,
    pub labels: usize,
    pub mix: LayerMix,
}

impl RandomPipelineConfig {
    pub fn projected(layers: usize, width: usize, params: usize) -> Self {
        Self {
            layers,
            width,
            params,
            labels: 1,
            mix: LayerMix::Projected,
        }
    }

    pub fn mixed(layers: usize, width: usize, params: usize) -> Self {
        Self {
            mix: LayerMix::Mixed,
            ..Self::projected(layers, width, params)
        }
    }
}

/// Draws a fully explicit pipeline specification. The same `(cfg, seed)`
/// always yields the same specification.
pub fn random_spec(cfg: &RandomPipelineConfig, seed: u64) -> PipelineSpec {
    assert!(cfg.layers >= 1 && cfg.width >= 1 && cfg.params >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.labels;
    let mut widths = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        widths.push(match cfg.mix {
            LayerMix::Mixed => rng.gen_range(1..=cfg.width),
            _ => cfg.width,
        });
    }
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers - 1 {
        let (n, m) = (widths[l], widths[l + 1]);
        let activation = match cfg.mix {
            LayerMix::Mixed if rng.gen_bool(0.5) => Activation::Softplus,
            _ => Activation::Tanh,
        };
        let projected = match cfg.mix {
            LayerMix::Projected => true,
            LayerMix::Dense => false,
            LayerMix::Mixed => rng.gen_bool(0.5),
        };
        if projected {
            let p = match cfg.mix {
                LayerMix::Mixed => rng.gen_range(1..=cfg.params),
                _ => cfg.params,
            };
            layers.push(LayerSpec::Projected {
                activation,
                in_features: n,
                out_features: m,
                labels: k,
                param_dim: p,
                mix: Some(uniform_rows(&mut rng, m, n, fan_in_scale(n))),
                proj: Some(uniform_rows(&mut rng, m, p, fan_in_scale(p))),
                bias: Some(uniform_vec(&mut rng, m, fan_in_scale(n))),
                params: Some(uniform_vec(&mut rng, p, 1.0)),
                seed: None,
            });
        } else {
            layers.push(LayerSpec::Dense {
                activation,
                in_features: n,
                out_features: m,
                labels: k,
                params: Some(uniform_vec(&mut rng, m * (n + 1), fan_in_scale(n))),
                seed: None,
            });
        }
    }
    let last = widths[cfg.layers - 1];
    layers.push(LayerSpec::SquaredLoss {
        in_features: last,
        labels: k,
        params: Some(uniform_vec(&mut rng, k * (last + 1), fan_in_scale(last))),
        seed: None,
    });
    let mut input = uniform_vec(&mut rng, widths[0], 1.0);
    input.extend(uniform_vec(&mut rng, k, 1.0));
    PipelineSpec {
        version: SPEC_VERSION,
        input,
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        for mix in [LayerMix::Projected, LayerMix::Dense, LayerMix::Mixed] {
            let cfg = RandomPipelineConfig {
                mix,
                ..RandomPipelineConfig::projected(4, 3, 2)
            };
            let a = random_spec(&cfg, 11);
            assert_eq!(a, random_spec(&cfg, 11));
            assert_ne!(a, random_spec(&cfg, 12));
            let inst = a.build().unwrap();
            assert_eq!(inst.pipeline.len(), 4);
            assert!(inst.evaluate().unwrap().loss().is_finite());
        }
    }

    #[test]
    fn single_layer_is_the_loss() {
        let spec = random_spec(&RandomPipelineConfig::projected(1, 2, 2), 0);
        let inst = spec.build().unwrap();
        assert_eq!(inst.pipeline.param_dims(), vec![3]);
        assert_eq!(inst.pipeline.activation_dims(), vec![3, 1]);
    }
}
