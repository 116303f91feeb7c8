//! Trainable components and the optimization contract.

mod checkpoint;
mod encoder;
mod heads;
mod layers;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use encoder::{
    encode, encode_backward, encode_cached, Backbone, EncoderCache, EncoderParams, EncoderShape, Propagation,
};
pub use heads::{
    adversary_predict, classify, decode, estimate_sensitive, estimator_backward, estimator_forward, EstimatorCache,
    HeadParams,
};
pub use layers::{relu, sigmoid, single_column, Linear, Mlp, MlpCache, OutputActivation};
pub use optim::{Adam, AdamConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::rng;

/// Per-tensor gradients, aligned with [`Parameters::tensors`].
pub type Gradients = Vec<Array2<f64>>;

/// Anything exposing its trainable tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn zero_gradients(&self) -> Gradients {
        self.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over the raw bits of every tensor, for immutability checks.
    fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn add_gradients(acc: &mut Gradients, other: &Gradients) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

pub fn scale_gradients(g: &mut Gradients, factor: f64) {
    for t in g.iter_mut() {
        t.mapv_inplace(|v| v * factor);
    }
}

/// Architecture choices shared by every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub n_layers: usize,
    pub teleport: f64,
    pub iterations: usize,
    pub estimator_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Gcn,
            hidden_dim: 16,
            out_dim: 16,
            n_layers: 2,
            teleport: 0.1,
            iterations: 10,
            estimator_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn encoder_shape(&self, in_dim: usize) -> EncoderShape {
        EncoderShape {
            backbone: self.backbone,
            in_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            n_layers: self.n_layers,
            teleport: self.teleport,
            iterations: self.iterations,
        }
    }
}

/// Encoder plus every head, initialized from labeled streams of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

impl ModelBundle {
    pub fn init(config: ModelConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let encoder = EncoderParams::init(&config.encoder_shape(in_dim), &mut rng::stream(seed, "init/encoder"))?;
        let d = config.out_dim;
        let heads = HeadParams {
            decoder: Mlp::glorot(&[d, in_dim], OutputActivation::Identity, &mut rng::stream(seed, "init/decoder")),
            classifier: Mlp::glorot(&[d, 1], OutputActivation::Sigmoid, &mut rng::stream(seed, "init/classifier")),
            estimator: EncoderParams::init(
                &EncoderShape {
                    backbone: Backbone::Gcn,
                    in_dim,
                    hidden_dim: config.estimator_hidden,
                    out_dim: 1,
                    n_layers: 2,
                    teleport: config.teleport,
                    iterations: config.iterations,
                },
                &mut rng::stream(seed, "init/estimator"),
            )?,
            adversary: Mlp::glorot(&[d, 1], OutputActivation::Sigmoid, &mut rng::stream(seed, "init/adversary")),
        };
        Ok(ModelBundle { config, encoder, heads })
    }
}
