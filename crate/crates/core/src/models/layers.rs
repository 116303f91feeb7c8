use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::rng::Rng;

/// `y = x · weight + bias`, weight stored `in × out`, bias `1 × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Linear {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-limit..=limit)),
            bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear { weight: Array2::zeros((inputs, outputs)), bias: Array2::zeros((1, outputs)) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `(d_weight, d_bias, d_input)` for upstream gradient `dy`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let dw = x.t().dot(&dy);
        let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = dy.dot(&self.weight.t());
        (dw, db, dx)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Multiplies `grad` by the ReLU derivative evaluated at pre-activation `pre`.
pub fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Perceptron stack: ReLU between layers, configurable output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: OutputActivation,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[d, K]`.
    pub fn glorot(dims: &[usize], output: OutputActivation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Mlp { layers: dims.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect(), output }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Linear::outputs)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let p = layer.forward(h.view());
            inputs.push(h);
            h = if k + 1 < self.layers.len() {
                relu(&p)
            } else {
                match self.output {
                    OutputActivation::Identity => p.clone(),
                    OutputActivation::Sigmoid => p.mapv(sigmoid),
                }
            };
            pre.push(p);
        }
        MlpCache { inputs, pre, out: h }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).out
    }

    /// Backpropagates `d_out` (gradient w.r.t. the activated output).
    /// Returns parameter gradients in [`Parameters::tensors`] order and the
    /// gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut grad = d_out.clone();
        if self.output == OutputActivation::Sigmoid {
            grad.zip_mut_with(&cache.out, |g, &s| *g *= s * (1.0 - s));
        }
        let mut grads = vec![Array2::zeros((0, 0)); 2 * self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                relu_backward(&mut grad, &cache.pre[k]);
            }
            let (dw, db, dx) = self.layers[k].backward(cache.inputs[k].view(), grad.view());
            grads[2 * k] = dw;
            grads[2 * k + 1] = db;
            grad = dx;
        }
        (grads, grad)
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(Linear::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(Linear::tensors_mut).collect()
    }
}

/// First column of a one-output network as a vector.
pub fn single_column(x: Array2<f64>) -> Array1<f64> {
    x.column(0).to_owned()
}
