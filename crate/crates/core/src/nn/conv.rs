//! 2-D convolution, `c_i = f(w · x_{i:i+h-1} + b)` per kernel and window.
//!
//! Weights are stored `[kernels, channels, kernel_h, kernel_w]`. The region
//! kernels evaluate only the top-left `rows × cols` block of the output map;
//! the full-map layer API is the special case where the block covers
//! everything.

use rand::Rng;

use super::tensor::{axpy, dot};
use super::{Activation, NnError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Geometry of a convolution's input and output maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvLayer {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        kernels: usize,
        channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let area = kernel_h * kernel_w;
        let limit = (6.0 / ((channels + kernels) * area) as f64).sqrt();
        Self {
            weights: Tensor::uniform(&[kernels, channels, kernel_h, kernel_w], limit, rng),
            bias: Tensor::zeros(&[kernels]),
            activation,
        }
    }

    pub fn zeros(
        kernels: usize,
        channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
    ) -> Self {
        Self {
            weights: Tensor::zeros(&[kernels, channels, kernel_h, kernel_w]),
            bias: Tensor::zeros(&[kernels]),
            activation,
        }
    }

    pub fn kernels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    pub fn geometry(
        &self,
        channels: usize,
        in_h: usize,
        in_w: usize,
        stride: (usize, usize),
    ) -> Result<ConvGeometry, NnError> {
        let (kernel_h, kernel_w) = self.kernel_size();
        if channels != self.channels()
            || kernel_h > in_h
            || kernel_w > in_w
            || stride.0 == 0
            || stride.1 == 0
        {
            return Err(NnError::ShapeMismatch {
                context: "convolution input",
                expected: vec![self.channels(), kernel_h, kernel_w],
                actual: vec![channels, in_h, in_w],
            });
        }
        Ok(ConvGeometry {
            channels,
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            stride_h: stride.0,
            stride_w: stride.1,
            out_h: (in_h - kernel_h) / stride.0 + 1,
            out_w: (in_w - kernel_w) / stride.1 + 1,
        })
    }

    /// Full-map forward pass, output `[kernels, out_h, out_w]` after activation.
    pub fn forward(&self, input: &Tensor, stride: (usize, usize)) -> Result<Tensor, NnError> {
        let (c, h, w) = input.as_chw()?;
        let g = self.geometry(c, h, w, stride)?;
        let mut out = Tensor::zeros(&[self.kernels(), g.out_h, g.out_w]);
        conv_region_preact(
            input.data(),
            &self.weights,
            &self.bias,
            &g,
            out.data_mut(),
            g.out_h,
            g.out_w,
        );
        self.activation.apply_in_place(out.data_mut());
        Ok(out)
    }

    /// Full-map backward pass. Accumulates into `grads` and returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_output: &Tensor,
        stride: (usize, usize),
        grads: &mut ConvLayer,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>, NnError> {
        let (c, h, w) = input.as_chw()?;
        let g = self.geometry(c, h, w, stride)?;
        if output.len() != grad_output.len() || output.len() != self.kernels() * g.out_h * g.out_w
        {
            return Err(NnError::ShapeMismatch {
                context: "convolution backward",
                expected: vec![self.kernels(), g.out_h, g.out_w],
                actual: grad_output.shape().to_vec(),
            });
        }
        let grad_pre: Vec<f64> = output
            .data()
            .iter()
            .zip(grad_output.data())
            .map(|(&y, &gy)| gy * self.activation.derivative_from_output(y))
            .collect();
        let mut grad_input = want_input_grad.then(|| Tensor::zeros(input.shape()));
        conv_region_backward(
            input.data(),
            &self.weights,
            &g,
            &grad_pre,
            g.out_h,
            g.out_w,
            grads,
            grad_input.as_mut().map(|t| t.data_mut()),
        );
        Ok(grad_input)
    }
}

/// `conv_forward(input, layer, stride)`: K feature maps from a 2-D or 3-D input.
pub fn conv_forward(
    input: &Tensor,
    layer: &ConvLayer,
    stride: (usize, usize),
) -> Result<Tensor, NnError> {
    layer.forward(input, stride)
}

/// Writes pre-activations for the output block `[0, rows) × [0, cols)` of
/// every kernel map. Entries outside the block are left untouched.
pub(crate) fn conv_region_preact(
    input: &[f64],
    weights: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
    out: &mut [f64],
    rows: usize,
    cols: usize,
) {
    let kernels = bias.len();
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let area = g.kernel_h * g.kernel_w;
    let w = weights.data();
    for k in 0..kernels {
        let out_k = &mut out[k * plane_out..(k + 1) * plane_out];
        for i in 0..rows {
            out_k[i * g.out_w..i * g.out_w + cols].fill(bias[k]);
        }
        for c in 0..g.channels {
            let in_c = &input[c * plane_in..(c + 1) * plane_in];
            let w_kc = &w[(k * g.channels + c) * area..(k * g.channels + c + 1) * area];
            for di in 0..g.kernel_h {
                for dj in 0..g.kernel_w {
                    let wv = w_kc[di * g.kernel_w + dj];
                    for i in 0..rows {
                        let in_row = &in_c[(i * g.stride_h + di) * g.in_w..];
                        let out_row = &mut out_k[i * g.out_w..i * g.out_w + cols];
                        if g.stride_w == 1 {
                            axpy(wv, &in_row[dj..dj + cols], out_row);
                        } else {
                            for (j, o) in out_row.iter_mut().enumerate() {
                                *o += wv * in_row[j * g.stride_w + dj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of [`conv_region_preact`] for pre-activation gradients
/// `grad_pre` laid out like the full output map.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_region_backward(
    input: &[f64],
    weights: &Tensor,
    g: &ConvGeometry,
    grad_pre: &[f64],
    rows: usize,
    cols: usize,
    grads: &mut ConvLayer,
    mut grad_input: Option<&mut [f64]>,
) {
    let kernels = weights.shape()[0];
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let area = g.kernel_h * g.kernel_w;
    let w = weights.data();
    for k in 0..kernels {
        let gp_k = &grad_pre[k * plane_out..(k + 1) * plane_out];
        let mut bias_grad = 0.0;
        for i in 0..rows {
            bias_grad += gp_k[i * g.out_w..i * g.out_w + cols].iter().sum::<f64>();
        }
        grads.bias[k] += bias_grad;
        for c in 0..g.channels {
            let in_c = &input[c * plane_in..(c + 1) * plane_in];
            let base = (k * g.channels + c) * area;
            for di in 0..g.kernel_h {
                for dj in 0..g.kernel_w {
                    let mut acc = 0.0;
                    for i in 0..rows {
                        let in_row = &in_c[(i * g.stride_h + di) * g.in_w..];
                        let gp_row = &gp_k[i * g.out_w..i * g.out_w + cols];
                        if g.stride_w == 1 {
                            acc += dot(gp_row, &in_row[dj..dj + cols]);
                        } else {
                            for (j, gv) in gp_row.iter().enumerate() {
                                acc += gv * in_row[j * g.stride_w + dj];
                            }
                        }
                    }
                    grads.weights[base + di * g.kernel_w + dj] += acc;
                    if let Some(gi) = grad_input.as_deref_mut() {
                        let wv = w[base + di * g.kernel_w + dj];
                        let gi_c = &mut gi[c * plane_in..(c + 1) * plane_in];
                        for i in 0..rows {
                            let gp_row = &gp_k[i * g.out_w..i * g.out_w + cols];
                            let start = (i * g.stride_h + di) * g.in_w + dj;
                            if g.stride_w == 1 {
                                axpy(wv, gp_row, &mut gi_c[start..start + cols]);
                            } else {
                                for (j, gv) in gp_row.iter().enumerate() {
                                    gi_c[start + j * g.stride_w] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight quadruple loop over kernels, output positions and window.
    fn naive_conv(input: &Tensor, layer: &ConvLayer, stride: (usize, usize)) -> Tensor {
        let (c, h, w) = input.as_chw().unwrap();
        let (kh, kw) = layer.kernel_size();
        let k = layer.kernels();
        let oh = (h - kh) / stride.0 + 1;
        let ow = (w - kw) / stride.1 + 1;
        let mut out = Tensor::zeros(&[k, oh, ow]);
        for kk in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = layer.bias[kk];
                    for cc in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let x = input[cc * h * w + (i * stride.0 + di) * w + j * stride.1 + dj];
                                let wv = layer.weights[((kk * c + cc) * kh + di) * kw + dj];
                                s += wv * x;
                            }
                        }
                    }
                    out[(kk * oh + i) * ow + j] = layer.activation.apply(s);
                }
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform(shape, 1.0, rng)
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut layer = ConvLayer::zeros(1, 1, 1, 1, Activation::Identity);
        layer.weights[0] = 1.0;
        let input = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -7.0]).unwrap();
        let out = conv_forward(&input, &layer, (1, 1)).unwrap();
        assert_eq!(out.data(), input.data());
        assert_eq!(out.shape(), &[1, 2, 3]);
    }

    #[test]
    fn zero_input_with_bias_gives_bias_after_relu() {
        let mut layer = ConvLayer::zeros(3, 1, 2, 2, Activation::Relu);
        layer.bias.fill(0.5);
        let out = conv_forward(&Tensor::zeros(&[5, 4]), &layer, (1, 1)).unwrap();
        assert_eq!(out.shape(), &[3, 4, 3]);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn matches_naive_oracle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (c, h, w, k, kh, kw, stride) in [
            (1, 6, 6, 1, 3, 3, (1, 1)),
            (1, 6, 6, 4, 3, 3, (1, 1)),
            (3, 9, 11, 5, 3, 5, (1, 1)),
            (2, 10, 13, 3, 2, 3, (2, 3)),
        ] {
            let mut layer = ConvLayer::new(k, c, kh, kw, Activation::Relu, &mut rng);
            layer.bias = random_tensor(&[k], &mut rng);
            let input = random_tensor(&[c, h, w], &mut rng);
            let fast = layer.forward(&input, stride).unwrap();
            let slow = naive_conv(&input, &layer, stride);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn output_dims_follow_floor_rule() {
        let layer = ConvLayer::zeros(2, 1, 3, 7, Activation::Relu);
        let g = layer.geometry(1, 47, 200, (1, 1)).unwrap();
        assert_eq!((g.out_h, g.out_w), (45, 194));
        let g = layer.geometry(1, 47, 200, (2, 3)).unwrap();
        assert_eq!((g.out_h, g.out_w), (23, 65));
    }

    #[test]
    fn oversized_kernel_is_shape_mismatch() {
        let layer = ConvLayer::zeros(1, 1, 5, 5, Activation::Relu);
        let err = conv_forward(&Tensor::zeros(&[4, 9]), &layer, (1, 1)).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
        let err = conv_forward(&Tensor::zeros(&[2, 9, 9]), &layer, (1, 1)).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }
}
