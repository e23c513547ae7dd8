use rand::Rng;

use super::tensor::{axpy, dot};
use super::{Activation, NnError, Tensor};

/// Fully connected layer `activation(W x + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weights: Tensor::uniform(&[outputs, inputs], limit, rng),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Pre-activation `W x + b`.
    pub fn linear(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.inputs() {
            return Err(NnError::ShapeMismatch {
                context: "dense input",
                expected: vec![self.inputs()],
                actual: vec![x.len()],
            });
        }
        let n = self.inputs();
        let w = self.weights.data();
        Ok((0..self.outputs())
            .map(|o| self.bias[o] + dot(&w[o * n..(o + 1) * n], x))
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut y = self.linear(x)?;
        self.activation.apply_in_place(&mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    /// `y` is this layer's forward output for input `x`.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        grad_y: &[f64],
        grads: &mut DenseLayer,
    ) -> Vec<f64> {
        let grad_pre: Vec<f64> = y
            .iter()
            .zip(grad_y)
            .map(|(&yv, &g)| g * self.activation.derivative_from_output(yv))
            .collect();
        self.backward_linear(x, &grad_pre, grads)
    }

    /// Backward pass given gradients of the pre-activation.
    pub fn backward_linear(&self, x: &[f64], grad_pre: &[f64], grads: &mut DenseLayer) -> Vec<f64> {
        let n = self.inputs();
        let w = self.weights.data();
        let mut grad_x = vec![0.0; n];
        let gw = grads.weights.data_mut();
        for (o, &g) in grad_pre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, x, &mut gw[o * n..(o + 1) * n]);
            axpy(g, &w[o * n..(o + 1) * n], &mut grad_x);
        }
        for (b, g) in grads.bias.data_mut().iter_mut().zip(grad_pre) {
            *b += g;
        }
        grad_x
    }
}

/// `dense_forward(x, layer)`.
pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor, NnError> {
    Ok(Tensor::vector(layer.forward(x.data())?))
}
