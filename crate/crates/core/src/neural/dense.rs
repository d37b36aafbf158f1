use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => pre.clone(),
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => pre.mapv(sigmoid),
        }
    }

    /// Multiplies `grad` in place by the activation derivative at `pre`.
    fn backprop(self, pre: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.zip_mut_with(pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad.zip_mut_with(pre, |g, &p| {
                let s = sigmoid(p);
                *g *= s * (1.0 - s)
            }),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Fully connected layer `act(input · W + b)` over a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Saved forward state for one `forward` call.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
}

impl DenseCache {
    pub fn pre_activation(&self) -> &Array2<f64> {
        &self.pre_activation
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Array2<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || rng.uniform_range(-bound, bound));
        DenseLayer {
            weight,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        if input.ncols() != self.inputs() {
            return Err(Error::shape("dense layer input", self.inputs(), input.ncols()));
        }
        let mut pre = input.dot(&self.weight);
        pre += &self.bias;
        let out = self.activation.apply(&pre);
        Ok((
            out,
            DenseCache {
                input: input.to_owned(),
                pre_activation: pre,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.inputs() {
            return Err(Error::shape("dense layer input", self.inputs(), input.ncols()));
        }
        let mut pre = input.dot(&self.weight);
        pre += &self.bias;
        Ok(match self.activation {
            Activation::Identity => pre,
            act => act.apply(&pre),
        })
    }

    pub fn backward(&self, cache: &DenseCache, output_grad: ArrayView2<f64>) -> Result<DenseGrads> {
        self.backward_inner(cache, output_grad, true)
    }

    /// Like `backward` but skips the input gradient (returned empty); for first layers.
    pub fn backward_params(&self, cache: &DenseCache, output_grad: ArrayView2<f64>) -> Result<DenseGrads> {
        self.backward_inner(cache, output_grad, false)
    }

    fn backward_inner(
        &self,
        cache: &DenseCache,
        output_grad: ArrayView2<f64>,
        want_input: bool,
    ) -> Result<DenseGrads> {
        if cache.input.ncols() != self.inputs() || cache.pre_activation.ncols() != self.outputs() {
            return Err(Error::Contract(format!(
                "cache was produced by a {}x{} layer, not this {}x{} layer",
                cache.input.ncols(),
                cache.pre_activation.ncols(),
                self.inputs(),
                self.outputs()
            )));
        }
        if output_grad.dim() != cache.pre_activation.dim() {
            return Err(Error::Contract(format!(
                "output gradient {:?} does not match cached activations {:?}",
                output_grad.dim(),
                cache.pre_activation.dim()
            )));
        }
        let mut delta = output_grad.to_owned();
        self.activation.backprop(&cache.pre_activation, &mut delta);
        let weight = cache.input.t().dot(&delta);
        let bias = delta.sum_axis(Axis(0));
        let input = if want_input {
            delta.dot(&self.weight.t())
        } else {
            Array2::zeros((0, 0))
        };
        Ok(DenseGrads { input, weight, bias })
    }
}
