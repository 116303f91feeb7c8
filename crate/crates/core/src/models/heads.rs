//! Per-node heads on top of the embeddings, plus the graph-based estimator.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::encoder::{encode_backward, encode_cached, EncoderCache, EncoderParams, Propagation};
use super::layers::{sigmoid, single_column, Mlp};
use super::{Gradients, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// d → K, linear output. Never sees the graph.
    pub decoder: Mlp,
    /// d → 1, sigmoid output.
    pub classifier: Mlp,
    /// Two-layer GCN over the masked attributes, sigmoid output.
    pub estimator: EncoderParams,
    /// d → 1, sigmoid output.
    pub adversary: Mlp,
}

fn check_width(head: &Mlp, z: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if z.ncols() == head.inputs() {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} expects {} embedding columns, got {}", head.inputs(), z.ncols())))
    }
}

pub fn decode(heads: &HeadParams, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_width(&heads.decoder, z, "decoder")?;
    Ok(heads.decoder.forward(z))
}

pub fn classify(heads: &HeadParams, z: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_width(&heads.classifier, z, "classifier")?;
    Ok(single_column(heads.classifier.forward(z)))
}

pub fn adversary_predict(heads: &HeadParams, z: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_width(&heads.adversary, z, "adversary")?;
    Ok(single_column(heads.adversary.forward(z)))
}

pub struct EstimatorCache {
    encoder: EncoderCache,
    out: Array1<f64>,
}

impl EstimatorCache {
    pub fn output(&self) -> &Array1<f64> {
        &self.out
    }
}

pub fn estimator_forward(
    heads: &HeadParams,
    prop: &Propagation,
    x_masked: ArrayView2<'_, f64>,
    sensitive_index: usize,
) -> Result<EstimatorCache> {
    if sensitive_index >= x_masked.ncols() {
        return Err(Error::Contract(format!("sensitive index {sensitive_index} out of range")));
    }
    if x_masked.column(sensitive_index).iter().any(|&v| v != 0.0) {
        return Err(Error::Contract("estimator input must have the sensitive column zeroed".into()));
    }
    let encoder = encode_cached(&heads.estimator, prop, x_masked).map_err(|e| e.in_context("estimator"))?;
    let out = encoder.embeddings().column(0).mapv(sigmoid);
    Ok(EstimatorCache { encoder, out })
}

/// Estimator parameter gradients for upstream `d_out` w.r.t. its probabilities.
pub fn estimator_backward(
    heads: &HeadParams,
    prop: &Propagation,
    cache: &EstimatorCache,
    d_out: &Array1<f64>,
) -> Gradients {
    let d_logit = Array2::from_shape_fn((d_out.len(), 1), |(i, _)| d_out[i] * cache.out[i] * (1.0 - cache.out[i]));
    encode_backward(&heads.estimator, prop, &cache.encoder, &d_logit)
}

pub fn estimate_sensitive(
    heads: &HeadParams,
    prop: &Propagation,
    x_masked: ArrayView2<'_, f64>,
    sensitive_index: usize,
) -> Result<Array1<f64>> {
    estimator_forward(heads, prop, x_masked, sensitive_index).map(|c| c.out)
}

impl Parameters for HeadParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.decoder.tensors();
        t.extend(self.classifier.tensors());
        t.extend(self.estimator.tensors());
        t.extend(self.adversary.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.decoder.tensors_mut();
        t.extend(self.classifier.tensors_mut());
        t.extend(self.estimator.tensors_mut());
        t.extend(self.adversary.tensors_mut());
        t
    }
}
