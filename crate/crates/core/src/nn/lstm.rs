//! LSTM cell over the concatenated vector `[h_{t-1}, x_t]`:
//!
//! ```text
//! i_t = σ(W_i·[h,x] + b_i)      C̃_t = tanh(W_C·[h,x] + b_C)
//! f_t = σ(W_f·[h,x] + b_f)      C_t = f_t ⊙ C_{t-1} + i_t ⊙ C̃_t
//! o_t = σ(W_o·[h,x] + b_o)      h_t = o_t ⊙ tanh(C_t)
//! ```

use rand::Rng;

use super::activation::sigmoid;
use super::tensor::{axpy, dot};
use super::{NnError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            c: vec![0.0; hidden],
            h: vec![0.0; hidden],
        }
    }
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    /// `[h_{t-1}, x_t]`
    pub concat: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let cols = hidden + input;
        let limit = (6.0 / (cols + hidden) as f64).sqrt();
        let mut w = || Tensor::uniform(&[hidden, cols], limit, rng);
        Self {
            w_i: w(),
            w_f: w(),
            w_c: w(),
            w_o: w(),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, hidden + input]);
        Self {
            w_i: w(),
            w_f: w(),
            w_c: w(),
            w_o: w(),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_i.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_i.shape()[1] - self.hidden()
    }

    pub fn step(
        &self,
        state: &LstmState,
        x: &[f64],
    ) -> Result<(LstmState, LstmStepCache), NnError> {
        let hidden = self.hidden();
        if x.len() != self.input() || state.h.len() != hidden || state.c.len() != hidden {
            return Err(NnError::ShapeMismatch {
                context: "lstm step",
                expected: vec![self.input(), hidden],
                actual: vec![x.len(), state.h.len()],
            });
        }
        let mut concat = Vec::with_capacity(hidden + x.len());
        concat.extend_from_slice(&state.h);
        concat.extend_from_slice(x);
        let cols = concat.len();
        let gate = |w: &Tensor, b: &Tensor, f: fn(f64) -> f64| -> Vec<f64> {
            (0..hidden)
                .map(|r| f(b[r] + dot(&w.data()[r * cols..(r + 1) * cols], &concat)))
                .collect()
        };
        let input_gate = gate(&self.w_i, &self.b_i, sigmoid);
        let candidate = gate(&self.w_c, &self.b_c, f64::tanh);
        let forget_gate = gate(&self.w_f, &self.b_f, sigmoid);
        let output_gate = gate(&self.w_o, &self.b_o, sigmoid);
        let c: Vec<f64> = (0..hidden)
            .map(|r| forget_gate[r] * state.c[r] + input_gate[r] * candidate[r])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..hidden).map(|r| output_gate[r] * tanh_c[r]).collect();
        Ok((
            LstmState { c, h },
            LstmStepCache {
                concat,
                input_gate,
                forget_gate,
                output_gate,
                candidate,
                c_prev: state.c.clone(),
                tanh_c,
            },
        ))
    }

    /// Backpropagates one step. `grad_h` and `grad_c` are the gradients
    /// arriving at `h_t` and `C_t`; returns `(dh_{t-1}, dC_{t-1}, dx_t)`.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache,
        grad_h: &[f64],
        grad_c: &[f64],
        grads: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hidden = self.hidden();
        let cols = cache.concat.len();
        let mut d_i = vec![0.0; hidden];
        let mut d_f = vec![0.0; hidden];
        let mut d_o = vec![0.0; hidden];
        let mut d_cand = vec![0.0; hidden];
        let mut grad_c_prev = vec![0.0; hidden];
        for r in 0..hidden {
            let (i, f, o, cand, tc) = (
                cache.input_gate[r],
                cache.forget_gate[r],
                cache.output_gate[r],
                cache.candidate[r],
                cache.tanh_c[r],
            );
            let dc = grad_c[r] + grad_h[r] * o * (1.0 - tc * tc);
            d_o[r] = grad_h[r] * tc * o * (1.0 - o);
            d_i[r] = dc * cand * i * (1.0 - i);
            d_f[r] = dc * cache.c_prev[r] * f * (1.0 - f);
            d_cand[r] = dc * i * (1.0 - cand * cand);
            grad_c_prev[r] = dc * f;
        }
        let mut grad_concat = vec![0.0; cols];
        let pairs: [(&Tensor, &mut Tensor, &mut Tensor, &[f64]); 4] = [
            (&self.w_i, &mut grads.w_i, &mut grads.b_i, &d_i),
            (&self.w_f, &mut grads.w_f, &mut grads.b_f, &d_f),
            (&self.w_c, &mut grads.w_c, &mut grads.b_c, &d_cand),
            (&self.w_o, &mut grads.w_o, &mut grads.b_o, &d_o),
        ];
        for (w, gw, gb, d) in pairs {
            for r in 0..hidden {
                let g = d[r];
                gb[r] += g;
                if g == 0.0 {
                    continue;
                }
                axpy(g, &cache.concat, &mut gw.data_mut()[r * cols..(r + 1) * cols]);
                axpy(g, &w.data()[r * cols..(r + 1) * cols], &mut grad_concat);
            }
        }
        let grad_x = grad_concat.split_off(hidden);
        (grad_concat, grad_c_prev, grad_x)
    }
}

/// `lstm_step(cell, state, x_t)`.
pub fn lstm_step(cell: &LstmCell, state: &LstmState, x: &[f64]) -> Result<LstmState, NnError> {
    Ok(cell.step(state, x)?.0)
}
