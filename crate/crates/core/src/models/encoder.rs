//! Message-passing encoders: GCN, jumping-knowledge GCN and APPNP.
//!
//! All three share the propagation operator `D^-1/2 (A + I) D^-1/2`.
//!
//! * GCN stacks `Â H W + b` layers with ReLU between them; the last layer is
//!   linear, so embeddings can take either sign.
//! * JK runs the same convolution stack with ReLU after every layer,
//!   concatenates all layer outputs and maps them through one linear layer.
//! * APPNP first transforms features with an MLP, then runs `iterations`
//!   steps of `H ← (1 - α) Â H + α H0` where α is the teleport probability.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{relu, relu_backward, Linear};
use super::Parameters;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Jk,
    Appnp,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Gcn => "gcn",
            Backbone::Jk => "jk",
            Backbone::Appnp => "appnp",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Backbone::Gcn),
            "jk" => Ok(Backbone::Jk),
            "appnp" => Ok(Backbone::Appnp),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Symmetrically normalized adjacency with self loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation(Csr);

impl Propagation {
    pub fn new(adjacency: &Csr) -> Self {
        Propagation(adjacency.gcn_normalized())
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn apply(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        self.0.matmul(h)
    }

    pub fn matrix(&self) -> &Csr {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub backbone: Backbone,
    /// Convolution layers (GCN, JK) or the pre-propagation MLP (APPNP).
    pub layers: Vec<Linear>,
    /// JK aggregation head over the concatenated layer outputs.
    pub jk_head: Option<Linear>,
    pub teleport: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub backbone: Backbone,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub n_layers: usize,
    pub teleport: f64,
    pub iterations: usize,
}

impl EncoderParams {
    pub fn init(shape: &EncoderShape, rng: &mut Rng) -> Result<Self> {
        if shape.n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if !(shape.teleport > 0.0 && shape.teleport <= 1.0) {
            return Err(Error::Config(format!("teleport {} outside (0, 1]", shape.teleport)));
        }
        let mut widths = vec![shape.in_dim];
        widths.extend(std::iter::repeat_n(shape.hidden_dim, shape.n_layers - 1));
        let (layers, jk_head) = match shape.backbone {
            Backbone::Gcn | Backbone::Appnp => {
                widths.push(shape.out_dim);
                (widths.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect(), None)
            }
            Backbone::Jk => {
                widths.push(shape.hidden_dim);
                let layers: Vec<Linear> = widths.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect();
                let head = Linear::glorot(shape.hidden_dim * shape.n_layers, shape.out_dim, rng);
                (layers, Some(head))
            }
        };
        Ok(EncoderParams {
            backbone: shape.backbone,
            layers,
            jk_head,
            teleport: shape.teleport,
            iterations: shape.iterations,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn out_dim(&self) -> usize {
        match &self.jk_head {
            Some(h) => h.outputs(),
            None => self.layers.last().map_or(0, Linear::outputs),
        }
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t: Vec<&Array2<f64>> = self.layers.iter().flat_map(Linear::tensors).collect();
        if let Some(h) = &self.jk_head {
            t.extend(h.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = self.layers.iter_mut().flat_map(Linear::tensors_mut).collect();
        if let Some(h) = &mut self.jk_head {
            t.extend(h.tensors_mut());
        }
        t
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    /// JK: concatenated layer outputs.
    concat: Option<Array2<f64>>,
    z: Array2<f64>,
}

impl EncoderCache {
    pub fn embeddings(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn into_embeddings(self) -> Array2<f64> {
        self.z
    }
}

fn check_finite(a: &Array2<f64>, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("encoder layer {layer}"), "non-finite activation"))
    }
}

pub fn encode(params: &EncoderParams, prop: &Propagation, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    encode_cached(params, prop, x).map(EncoderCache::into_embeddings)
}

pub fn encode_cached(params: &EncoderParams, prop: &Propagation, x: ArrayView2<'_, f64>) -> Result<EncoderCache> {
    if x.nrows() != prop.n() || x.ncols() != params.in_dim() {
        return Err(Error::Contract(format!(
            "encoder expects {}x{} input, got {}x{}",
            prop.n(),
            params.in_dim(),
            x.nrows(),
            x.ncols()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut h = x.to_owned();
    match params.backbone {
        Backbone::Gcn | Backbone::Jk => {
            let relu_last = params.backbone == Backbone::Jk;
            let mut outs = Vec::new();
            for (l, layer) in params.layers.iter().enumerate() {
                let p = prop.apply(h.dot(&layer.weight).view()) + &layer.bias;
                check_finite(&p, l)?;
                inputs.push(h);
                h = if l + 1 < n_layers || relu_last { relu(&p) } else { p.clone() };
                pre.push(p);
                if relu_last {
                    outs.push(h.clone());
                }
            }
            if let Some(head) = &params.jk_head {
                let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
                let concat = concatenate(Axis(1), &views).expect("layer outputs share row count");
                let z = head.forward(concat.view());
                check_finite(&z, n_layers)?;
                return Ok(EncoderCache { inputs, pre, concat: Some(concat), z });
            }
            Ok(EncoderCache { inputs, pre, concat: None, z: h })
        }
        Backbone::Appnp => {
            for (l, layer) in params.layers.iter().enumerate() {
                let p = layer.forward(h.view());
                check_finite(&p, l)?;
                inputs.push(h);
                h = if l + 1 < n_layers { relu(&p) } else { p.clone() };
                pre.push(p);
            }
            let alpha = params.teleport;
            let h0 = h;
            let mut z = h0.clone();
            for _ in 0..params.iterations {
                z = prop.apply(z.view()) * (1.0 - alpha) + &(&h0 * alpha);
            }
            check_finite(&z, n_layers)?;
            Ok(EncoderCache { inputs, pre, concat: None, z })
        }
    }
}

/// Gradients of the encoder parameters, in [`Parameters::tensors`] order,
/// given the upstream gradient `dz` w.r.t. the embeddings.
pub fn encode_backward(
    params: &EncoderParams,
    prop: &Propagation,
    cache: &EncoderCache,
    dz: &Array2<f64>,
) -> Vec<Array2<f64>> {
    let n_layers = params.layers.len();
    let mut grads = vec![Array2::zeros((0, 0)); 2 * n_layers];
    match params.backbone {
        Backbone::Gcn | Backbone::Jk => {
            let mut upstream: Vec<Option<Array2<f64>>> = vec![None; n_layers];
            let mut head_grads = None;
            if let (Some(head), Some(concat)) = (&params.jk_head, &cache.concat) {
                let (dw, db, dconcat) = head.backward(concat.view(), dz.view());
                head_grads = Some((dw, db));
                let width = params.layers[0].outputs();
                for (l, slot) in upstream.iter_mut().enumerate() {
                    *slot = Some(dconcat.slice(s![.., l * width..(l + 1) * width]).to_owned());
                }
            } else {
                upstream[n_layers - 1] = Some(dz.clone());
            }
            let relu_last = params.backbone == Backbone::Jk;
            let mut carry: Option<Array2<f64>> = None;
            for l in (0..n_layers).rev() {
                // Gradient w.r.t. this layer's activated output.
                let mut d_out = match (carry.take(), upstream[l].take()) {
                    (Some(a), Some(b)) => a + b,
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => Array2::zeros(cache.pre[l].raw_dim()),
                };
                if l + 1 < n_layers || relu_last {
                    relu_backward(&mut d_out, &cache.pre[l]);
                }
                let layer = &params.layers[l];
                grads[2 * l + 1] = d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dm = prop.apply(d_out.view());
                grads[2 * l] = cache.inputs[l].t().dot(&dm);
                if l > 0 {
                    carry = Some(dm.dot(&layer.weight.t()));
                }
            }
            if let Some((dw, db)) = head_grads {
                grads.push(dw);
                grads.push(db);
            }
        }
        Backbone::Appnp => {
            let alpha = params.teleport;
            let mut g = dz.clone();
            let mut dh0 = Array2::<f64>::zeros(dz.raw_dim());
            for _ in 0..params.iterations {
                dh0 += &(&g * alpha);
                g = prop.apply(g.view()) * (1.0 - alpha);
            }
            let mut grad = g + dh0;
            for l in (0..n_layers).rev() {
                if l + 1 < n_layers {
                    relu_backward(&mut grad, &cache.pre[l]);
                }
                let (dw, db, dx) = params.layers[l].backward(cache.inputs[l].view(), grad.view());
                grads[2 * l] = dw;
                grads[2 * l + 1] = db;
                grad = dx;
            }
        }
    }
    grads
}
