//! Max pooling, `ĉ = max(c_1, …, c_n)` over each window of each channel.

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window_h: usize,
    pub window_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(
        (channels, in_h, in_w): (usize, usize, usize),
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Self, NnError> {
        if window.0 == 0
            || window.1 == 0
            || window.0 > in_h
            || window.1 > in_w
            || stride.0 == 0
            || stride.1 == 0
        {
            return Err(NnError::ShapeMismatch {
                context: "max pool window",
                expected: vec![window.0, window.1],
                actual: vec![in_h, in_w],
            });
        }
        Ok(Self {
            channels,
            in_h,
            in_w,
            window_h: window.0,
            window_w: window.1,
            stride_h: stride.0,
            stride_w: stride.1,
            out_h: (in_h - window.0) / stride.0 + 1,
            out_w: (in_w - window.1) / stride.1 + 1,
        })
    }
}

/// Max-pools every channel; output is `[C, out_h, out_w]`.
pub fn max_pool(
    input: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor, NnError> {
    Ok(max_pool_with_indices(input, window, stride)?.0)
}

/// Like [`max_pool`], also returning for each output the flat index (within
/// its channel plane) of the input element that won.
pub fn max_pool_with_indices(
    input: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor, Vec<u32>), NnError> {
    let g = PoolGeometry::new(input.as_chw()?, window, stride)?;
    let mut out = Tensor::zeros(&[g.channels, g.out_h, g.out_w]);
    let mut argmax = vec![0u32; g.channels * g.out_h * g.out_w];
    pool_region(input.data(), &g, out.data_mut(), &mut argmax, g.out_h, g.out_w);
    Ok((out, argmax))
}

/// Routes output gradients back to the winning inputs.
pub fn max_pool_backward(
    input_shape: &[usize],
    argmax: &[u32],
    grad_output: &Tensor,
) -> Result<Tensor, NnError> {
    let mut grad = Tensor::zeros(input_shape);
    let (c, h, w) = grad.as_chw()?;
    let per_channel = grad_output.len() / c.max(1);
    if argmax.len() != grad_output.len() || per_channel * c != grad_output.len() {
        return Err(NnError::ShapeMismatch {
            context: "max pool backward",
            expected: vec![argmax.len()],
            actual: vec![grad_output.len()],
        });
    }
    for ch in 0..c {
        for p in 0..per_channel {
            let idx = ch * per_channel + p;
            grad[ch * h * w + argmax[idx] as usize] += grad_output[idx];
        }
    }
    Ok(grad)
}

/// Pools the output block `[0, rows) × [0, cols)` of every channel. Ties go
/// to the first maximum in row-major window order.
pub(crate) fn pool_region(
    input: &[f64],
    g: &PoolGeometry,
    out: &mut [f64],
    argmax: &mut [u32],
    rows: usize,
    cols: usize,
) {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    for c in 0..g.channels {
        let in_c = &input[c * plane_in..(c + 1) * plane_in];
        for i in 0..rows {
            for j in 0..cols {
                let r0 = i * g.stride_h;
                let c0 = j * g.stride_w;
                let mut best = r0 * g.in_w + c0;
                let mut best_v = in_c[best];
                for di in 0..g.window_h {
                    let row = (r0 + di) * g.in_w;
                    for dj in 0..g.window_w {
                        let v = in_c[row + c0 + dj];
                        if v > best_v {
                            best_v = v;
                            best = row + c0 + dj;
                        }
                    }
                }
                let o = c * plane_out + i * g.out_w + j;
                out[o] = best_v;
                argmax[o] = best as u32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_window_gives_scalar_max() {
        let input = Tensor::from_vec(&[2, 3], vec![0.1, 4.0, -1.0, 3.9, 2.0, 0.0]).unwrap();
        let out = max_pool(&input, (2, 3), (1, 1)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let input = Tensor::filled(&[3, 6, 8], 1.25);
        let out = max_pool(&input, (2, 2), (2, 2)).unwrap();
        assert_eq!(out.shape(), &[3, 3, 4]);
        assert!(out.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn random_4x4_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let input = Tensor::uniform(&[4, 4], 1.0, &mut rng);
            let out = max_pool(&input, (2, 2), (2, 2)).unwrap();
            for bi in 0..2 {
                for bj in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for i in 2 * bi..2 * bi + 2 {
                        for j in 2 * bj..2 * bj + 2 {
                            m = m.max(input[i * 4 + j]);
                        }
                    }
                    assert_eq!(out[bi * 2 + bj], m);
                }
            }
        }
    }

    #[test]
    fn backward_routes_to_argmax() {
        let input = Tensor::from_vec(&[2, 2], vec![1.0, 5.0, 2.0, 3.0]).unwrap();
        let (_, idx) = max_pool_with_indices(&input, (2, 2), (2, 2)).unwrap();
        let g = max_pool_backward(&[2, 2], &idx, &Tensor::vector(vec![2.5])).unwrap();
        assert_eq!(g.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        assert!(max_pool(&Tensor::zeros(&[2, 2]), (3, 1), (1, 1)).is_err());
    }
}
