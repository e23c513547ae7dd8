use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig::Sgd { learning_rate }
    }
}

/// Optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `optimizer_step(params, grads, config)`: updates `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                context: "optimizer parameter list",
                expected: vec![params.len()],
                actual: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    context: "optimizer gradient",
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= learning_rate * gv;
                    }
                }
            }
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first_moment[idx];
                    let v = &mut self.second_moment[idx];
                    for (k, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                        let m_hat = m[k] / bias1;
                        let v_hat = v[k] / bias2;
                        *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
