//! Minimal numeric engine: tensors, the convolution / pooling / dense / LSTM
//! layers with hand-written backward passes, optimizers, and finite-difference
//! gradient verification. Everything is `f64`.

mod activation;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod lstm;
pub mod optim;
pub mod pool;
mod tensor;

pub use activation::{sigmoid, Activation};
pub use conv::{conv_forward, ConvGeometry, ConvLayer};
pub use dense::{dense_forward, DenseLayer};
pub use gradcheck::{finite_diff_check, GradCheckReport, Parameterized, TensorCheck};
pub use lstm::{lstm_step, LstmCell, LstmState, LstmStepCache};
pub use optim::{Optimizer, OptimizerConfig};
pub use pool::{max_pool, max_pool_backward, max_pool_with_indices, PoolGeometry};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Binary cross-entropy of a logit `z` against a 0/1 target, and its
/// derivative with respect to `z`.
pub fn bce_with_logit(z: f64, target: f64) -> (f64, f64) {
    // log(1 + e^z) - t z, written to avoid overflow
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    (softplus - target * z, sigmoid(z) - target)
}
