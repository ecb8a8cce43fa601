//! Fully connected layers: `y = activation(W x + b)`.
//!
//! Weights are stored row-major with shape `[out, in]`. A layer used for
//! training caches its last input and pre-activations so that `backward`
//! can apply the chain rule; the cache-free [`DenseLayer::apply`] path is
//! what inference and attribution use.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_lhs_transposed, matmul_transposed, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. The relu kink at 0 takes derivative 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    preact: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
    cache: Option<LayerCache>,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "layer weights must be [out, in], got {:?}",
                weights.shape()
            )));
        }
        let out = weights.shape()[0];
        bias.expect_shape("layer bias", &[out])?;
        Ok(Self {
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Input("layer dimensions must be positive".into()));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::Input(format!("initializer range: {e}")))?;
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self::new(
            Tensor::new(vec![out_dim, in_dim], data)?,
            Tensor::zeros(&[out_dim]),
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.bias]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Pre-activations `W x + b` for a `[batch, in]` input.
    pub fn preactivation(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape().len() != 2 || input.shape()[1] != self.in_dim() {
            return Err(Error::Dimension(format!(
                "layer input: expected [batch, {}], got {:?} (weights {:?})",
                self.in_dim(),
                input.shape(),
                self.weights.shape()
            )));
        }
        let (batch, out) = (input.rows(), self.out_dim());
        let mut z = matmul_transposed(
            input.data(),
            batch,
            self.in_dim(),
            self.weights.data(),
            out,
        );
        for row in z.chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Tensor::new(vec![batch, out], z)
    }

    /// Cache-free forward returning `(pre-activation, output)`.
    pub fn apply(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let z = self.preactivation(input)?;
        let act = self.activation;
        let y = z.map(|v| act.apply(v));
        Ok((z, y))
    }

    /// Forward pass that remembers the input for [`DenseLayer::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (preact, out) = self.apply(input)?;
        self.cache = Some(LayerCache {
            input: input.clone(),
            preact,
        });
        Ok(out)
    }

    /// Gradient w.r.t. the pre-activations given the gradient w.r.t. outputs.
    pub(crate) fn preact_grad(&self, preact: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        upstream.expect_shape("upstream gradient", preact.shape())?;
        let act = self.activation;
        let data = preact
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&z, &g)| g * act.derivative(z))
            .collect();
        Tensor::new(preact.shape().to_vec(), data)
    }

    /// Gradient w.r.t. the layer input only, from an explicit pre-activation.
    pub fn input_grad(&self, preact: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        let dz = self.preact_grad(preact, upstream)?;
        let batch = dz.rows();
        let dx = matmul(dz.data(), batch, self.out_dim(), self.weights.data(), self.in_dim());
        Tensor::new(vec![batch, self.in_dim()], dx)
    }

    /// Backward pass against the cached forward. Gradients of the weights and
    /// bias are summed over the batch.
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called without a cached forward".into()))?;
        let dz = self.preact_grad(&cache.preact, upstream)?;
        let (batch, out, inp) = (dz.rows(), self.out_dim(), self.in_dim());
        let dx = matmul(dz.data(), batch, out, self.weights.data(), inp);
        let dw = matmul_lhs_transposed(dz.data(), batch, out, cache.input.data(), inp);
        let mut db = vec![0.0; out];
        for row in dz.iter_rows() {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok(LayerGrads {
            input: Tensor::new(vec![batch, inp], dx)?,
            weights: Tensor::new(vec![out, inp], dw)?,
            bias: Tensor::vector(db),
        })
    }
}
