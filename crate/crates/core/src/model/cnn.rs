//! Convolution stack over one raw feature matrix.
//!
//! Raw matrices are zero outside their top-left block of text, so every
//! intermediate map is a per-channel constant ("background") outside a
//! top-left active block. Only the active block is convolved and pooled; the
//! background values are carried as one number per channel. Full-size maps
//! are still materialized so windows straddling the block edge read the
//! correct values. Results are identical to the dense computation.

use crate::features::RawFeatureMatrix;
use crate::nn::{ConvGeometry, ConvLayer, DenseLayer, PoolGeometry};

/// Channel-major map `[channels, h, w]` whose entries outside the
/// `active.0 × active.1` top-left block equal `bg[channel]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Map {
    pub data: Vec<f64>,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub active: (usize, usize),
    pub bg: Vec<f64>,
}

impl Map {
    fn filled(channels: usize, h: usize, w: usize, active: (usize, usize), bg: Vec<f64>) -> Self {
        let plane = h * w;
        let mut data = vec![0.0; channels * plane];
        for (c, &v) in bg.iter().enumerate() {
            if v != 0.0 {
                data[c * plane..(c + 1) * plane].fill(v);
            }
        }
        Self {
            data,
            channels,
            h,
            w,
            active,
            bg,
        }
    }

    pub fn from_matrix(m: &RawFeatureMatrix, rows: usize, cols: usize) -> Self {
        let active = (m.active_rows().min(rows), m.active_cols().min(cols));
        let active = if active.0 == 0 || active.1 == 0 {
            (0, 0)
        } else {
            active
        };
        Self {
            data: m.to_dense_block(rows, cols),
            channels: 1,
            h: rows,
            w: cols,
            active,
            bg: vec![0.0],
        }
    }
}

/// Outputs whose window starts inside the active extent.
fn active_extent(active: usize, stride: usize, out: usize) -> usize {
    active.div_ceil(stride).min(out)
}

/// Geometry of one conv + pool stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct StagePlan {
    pub conv: ConvGeometry,
    pub pool: PoolGeometry,
}

/// Per-batch constants derived from the current weights.
#[derive(Debug, Clone, Default)]
pub(crate) struct CnnConstants {
    /// Per stage, `Σ_{di,dj} w[k, c, di, dj]` laid out `[k * C + c]`.
    pub kernel_sums: Vec<Vec<f64>>,
    /// `Σ_p W[o, (c, p)]` of the dense layer after the stack, `[o * C + c]`.
    pub dense_colsum: Vec<f64>,
}

impl CnnConstants {
    pub fn compute(conv: &[ConvLayer], dense: &DenseLayer, flat: (usize, usize)) -> Self {
        let kernel_sums = conv
            .iter()
            .map(|layer| {
                let (kh, kw) = layer.kernel_size();
                layer
                    .weights
                    .data()
                    .chunks_exact(kh * kw)
                    .map(|w| w.iter().sum())
                    .collect()
            })
            .collect();
        let (channels, plane) = flat;
        let dense_colsum = dense
            .weights
            .data()
            .chunks_exact(plane)
            .map(|seg| seg.iter().sum())
            .collect::<Vec<f64>>();
        debug_assert_eq!(dense_colsum.len(), dense.outputs() * channels);
        Self {
            kernel_sums,
            dense_colsum,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    pub input: Map,
    pub conv_out: Map,
    pub argmax: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(crate) struct CnnCache {
    pub stages: Vec<StageCache>,
    pub output: Map,
}

fn conv_stage_forward(layer: &ConvLayer, g: &ConvGeometry, input: &Map, ksum: &[f64]) -> Map {
    let kernels = layer.kernels();
    let bg: Vec<f64> = (0..kernels)
        .map(|k| {
            let pre = layer.bias[k]
                + (0..g.channels)
                    .map(|c| input.bg[c] * ksum[k * g.channels + c])
                    .sum::<f64>();
            layer.activation.apply(pre)
        })
        .collect();
    let active = (
        active_extent(input.active.0, g.stride_h, g.out_h),
        active_extent(input.active.1, g.stride_w, g.out_w),
    );
    let mut out = Map::filled(kernels, g.out_h, g.out_w, active, bg);
    if active.0 > 0 && active.1 > 0 {
        crate::nn::conv::conv_region_preact(
            &input.data,
            &layer.weights,
            &layer.bias,
            g,
            &mut out.data,
            active.0,
            active.1,
        );
        let plane = g.out_h * g.out_w;
        for k in 0..kernels {
            for i in 0..active.0 {
                let row = &mut out.data[k * plane + i * g.out_w..k * plane + i * g.out_w + active.1];
                layer.activation.apply_in_place(row);
            }
        }
    }
    out
}

fn pool_stage_forward(g: &PoolGeometry, input: &Map) -> (Map, Vec<u32>) {
    let active = (
        active_extent(input.active.0, g.stride_h, g.out_h),
        active_extent(input.active.1, g.stride_w, g.out_w),
    );
    let mut out = Map::filled(g.channels, g.out_h, g.out_w, active, input.bg.clone());
    let mut argmax = vec![0u32; g.channels * g.out_h * g.out_w];
    if active.0 > 0 && active.1 > 0 {
        crate::nn::pool::pool_region(&input.data, g, &mut out.data, &mut argmax, active.0, active.1);
    }
    (out, argmax)
}

pub(crate) fn cnn_forward(
    conv: &[ConvLayer],
    plans: &[StagePlan],
    consts: &CnnConstants,
    input: Map,
) -> CnnCache {
    let mut stages = Vec::with_capacity(plans.len());
    let mut current = input;
    for ((layer, plan), ksum) in conv.iter().zip(plans).zip(&consts.kernel_sums) {
        let conv_out = conv_stage_forward(layer, &plan.conv, &current, ksum);
        let (pooled, argmax) = pool_stage_forward(&plan.pool, &conv_out);
        stages.push(StageCache {
            input: current,
            conv_out,
            argmax,
        });
        current = pooled;
    }
    CnnCache {
        stages,
        output: current,
    }
}

/// Pre-activation of the dense layer applied to the flattened map.
pub(crate) fn dense_forward_map(dense: &DenseLayer, colsum: &[f64], x: &Map) -> Vec<f64> {
    let plane = x.h * x.w;
    let n = x.channels * plane;
    let w = dense.weights.data();
    let (ar, ac) = x.active;
    (0..dense.outputs())
        .map(|o| {
            let row = &w[o * n..(o + 1) * n];
            let mut z = dense.bias[o];
            for c in 0..x.channels {
                let bg = x.bg[c];
                z += bg * colsum[o * x.channels + c];
                for i in 0..ar {
                    let start = c * plane + i * x.w;
                    let wr = &row[start..start + ac];
                    let xr = &x.data[start..start + ac];
                    z += wr.iter().zip(xr).map(|(a, b)| a * (b - bg)).sum::<f64>();
                }
            }
            z
        })
        .collect()
}

/// Gradient accumulators that are cheaper to broadcast once per batch.
#[derive(Debug, Clone)]
pub(crate) struct CnnGradScratch {
    /// `Σ g[o] · bg[c]`, to be added to every `W[o, (c, p)]`.
    pub dense_bg: Vec<f64>,
}

impl CnnGradScratch {
    pub fn new(outputs: usize, channels: usize) -> Self {
        Self {
            dense_bg: vec![0.0; outputs * channels],
        }
    }

    /// Adds the deferred background terms into `grads` and clears them.
    pub fn flush(&mut self, grads: &mut DenseLayer, channels: usize) {
        let n = grads.weights.shape()[1];
        let plane = n / channels;
        let gw = grads.weights.data_mut();
        for (idx, acc) in self.dense_bg.iter_mut().enumerate() {
            if *acc != 0.0 {
                let (o, c) = (idx / channels, idx % channels);
                for v in &mut gw[o * n + c * plane..o * n + (c + 1) * plane] {
                    *v += *acc;
                }
                *acc = 0.0;
            }
        }
    }
}

/// Backward of [`dense_forward_map`] for pre-activation gradient `g`.
/// Returns the gradient on the active block (full layout) and on the
/// background value of each channel.
pub(crate) fn dense_backward_map(
    dense: &DenseLayer,
    colsum: &[f64],
    x: &Map,
    g: &[f64],
    grads: &mut DenseLayer,
    scratch: &mut CnnGradScratch,
) -> (Vec<f64>, Vec<f64>) {
    let plane = x.h * x.w;
    let n = x.channels * plane;
    let (ar, ac) = x.active;
    let w = dense.weights.data();
    let mut dx = vec![0.0; n];
    let mut dbg = vec![0.0; x.channels];
    // Offsets of x - bg on the active block, row by row.
    let mut delta = vec![0.0; n];
    for c in 0..x.channels {
        for i in 0..ar {
            let start = c * plane + i * x.w;
            for j in start..start + ac {
                delta[j] = x.data[j] - x.bg[c];
            }
        }
    }
    {
        let gw = grads.weights.data_mut();
        for (o, &go) in g.iter().enumerate() {
            grads.bias[o] += go;
            if go == 0.0 {
                continue;
            }
            let row = &w[o * n..(o + 1) * n];
            let grow = &mut gw[o * n..(o + 1) * n];
            for c in 0..x.channels {
                scratch.dense_bg[o * x.channels + c] += go * x.bg[c];
                dbg[c] += go * colsum[o * x.channels + c];
                for i in 0..ar {
                    let s = c * plane + i * x.w;
                    for j in s..s + ac {
                        grow[j] += go * delta[j];
                        dx[j] += go * row[j];
                    }
                }
            }
        }
    }
    for c in 0..x.channels {
        for i in 0..ar {
            let s = c * plane + i * x.w;
            dbg[c] -= dx[s..s + ac].iter().sum::<f64>();
        }
    }
    (dx, dbg)
}

fn pool_stage_backward(
    g: &PoolGeometry,
    input: &Map,
    output_active: (usize, usize),
    argmax: &[u32],
    d_out: &[f64],
    d_bg_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let mut d_in = vec![0.0; g.channels * plane_in];
    let mut d_bg = d_bg_out.to_vec();
    let (ar, ac) = input.active;
    for c in 0..g.channels {
        for i in 0..output_active.0 {
            for j in 0..output_active.1 {
                let o = c * plane_out + i * g.out_w + j;
                let grad = d_out[o];
                if grad == 0.0 {
                    continue;
                }
                let idx = argmax[o] as usize;
                let (r, col) = (idx / g.in_w, idx % g.in_w);
                if r < ar && col < ac {
                    d_in[c * plane_in + idx] += grad;
                } else {
                    d_bg[c] += grad;
                }
            }
        }
    }
    (d_in, d_bg)
}

#[allow(clippy::too_many_arguments)]
fn conv_stage_backward(
    layer: &ConvLayer,
    g: &ConvGeometry,
    ksum: &[f64],
    input: &Map,
    output: &Map,
    d_out: &[f64],
    d_bg_out: &[f64],
    grads: &mut ConvLayer,
    want_input: bool,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let kernels = layer.kernels();
    let plane_out = g.out_h * g.out_w;
    let (or, oc) = output.active;
    let mut grad_pre = vec![0.0; kernels * plane_out];
    for k in 0..kernels {
        for i in 0..or {
            let s = k * plane_out + i * g.out_w;
            for j in s..s + oc {
                grad_pre[j] = d_out[j] * layer.activation.derivative_from_output(output.data[j]);
            }
        }
    }
    let d_pre_bg: Vec<f64> = (0..kernels)
        .map(|k| d_bg_out[k] * layer.activation.derivative_from_output(output.bg[k]))
        .collect();
    let mut d_in = want_input.then(|| vec![0.0; input.data.len()]);
    if or > 0 && oc > 0 {
        crate::nn::conv::conv_region_backward(
            &input.data,
            &layer.weights,
            g,
            &grad_pre,
            or,
            oc,
            grads,
            d_in.as_deref_mut(),
        );
    }
    let area = g.kernel_h * g.kernel_w;
    for k in 0..kernels {
        let d = d_pre_bg[k];
        if d == 0.0 {
            continue;
        }
        grads.bias[k] += d;
        for c in 0..g.channels {
            let v = d * input.bg[c];
            let base = (k * g.channels + c) * area;
            for w in &mut grads.weights.data_mut()[base..base + area] {
                *w += v;
            }
        }
    }
    let mut d_in = d_in?;
    let plane_in = g.in_h * g.in_w;
    let (ar, ac) = input.active;
    let mut d_bg = vec![0.0; g.channels];
    for c in 0..g.channels {
        let mut outside = 0.0;
        for r in 0..g.in_h {
            let row = &mut d_in[c * plane_in + r * g.in_w..c * plane_in + (r + 1) * g.in_w];
            let from = if r < ar { ac } else { 0 };
            for v in &mut row[from..] {
                outside += *v;
                *v = 0.0;
            }
        }
        d_bg[c] = outside
            + (0..kernels)
                .map(|k| d_pre_bg[k] * ksum[k * g.channels + c])
                .sum::<f64>();
    }
    Some((d_in, d_bg))
}

/// Backpropagates gradients on the stack output (active block plus
/// per-channel background) into the conv parameters.
pub(crate) fn cnn_backward(
    conv: &[ConvLayer],
    plans: &[StagePlan],
    consts: &CnnConstants,
    cache: &CnnCache,
    d_out: Vec<f64>,
    d_bg_out: Vec<f64>,
    grads: &mut [ConvLayer],
) {
    let mut d = d_out;
    let mut d_bg = d_bg_out;
    let mut pooled_active = cache.output.active;
    for s in (0..plans.len()).rev() {
        let stage = &cache.stages[s];
        let plan = &plans[s];
        let (d_conv, d_conv_bg) = pool_stage_backward(
            &plan.pool,
            &stage.conv_out,
            pooled_active,
            &stage.argmax,
            &d,
            &d_bg,
        );
        let next = conv_stage_backward(
            &conv[s],
            &plan.conv,
            &consts.kernel_sums[s],
            &stage.input,
            &stage.conv_out,
            &d_conv,
            &d_conv_bg,
            &mut grads[s],
            s > 0,
        );
        match next {
            Some((di, dbg)) => {
                d = di;
                d_bg = dbg;
                pooled_active = stage.input.active;
            }
            None => break,
        }
    }
}
