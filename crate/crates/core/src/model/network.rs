//! Network parameters with the forward and backward passes.

use std::cell::OnceCell;

use rand::Rng;

use super::cnn::{self, CnnCache, CnnConstants, CnnGradScratch, Map};
use super::config::{HstfConfig, Plan};
use super::ModelError;
use crate::features::{EncodedFlow, RawFeatureMatrix, FL_LEN, PL_LEN};
use crate::nn::{
    bce_with_logit, finite_diff_check, Activation, ConvLayer, DenseLayer, GradCheckReport, LstmCell, LstmState,
    LstmStepCache, Parameterized, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HstfParams {
    pub conv: Vec<ConvLayer>,
    pub cnn_dense: DenseLayer,
    pub pl_encoder: DenseLayer,
    pub pl_dense: DenseLayer,
    pub lstm: LstmCell,
    pub fl_encoder: DenseLayer,
    /// Hidden ReLU layers followed by the single-logit output layer.
    pub head: Vec<DenseLayer>,
}

impl HstfParams {
    pub(crate) fn init<R: Rng + ?Sized>(cfg: &HstfConfig, plan: &Plan, rng: &mut R) -> Self {
        let mut channels = 1;
        let conv = cfg
            .conv
            .iter()
            .map(|s| {
                let layer = ConvLayer::new(s.kernels, channels, s.kernel[0], s.kernel[1], Activation::Relu, rng);
                channels = s.kernels;
                layer
            })
            .collect();
        let flat = plan.flat.0 * plan.flat.1;
        let cnn_dense = DenseLayer::new(flat, cfg.cnn_dense, Activation::Relu, rng);
        let pl_encoder = DenseLayer::new(PL_LEN, cfg.pl_encoder, Activation::Relu, rng);
        let pl_dense = DenseLayer::new(cfg.pl_encoder, cfg.pl_dense, Activation::Relu, rng);
        let lstm = LstmCell::new(cfg.embedding_width(), cfg.lstm_hidden, rng);
        let fl_encoder = DenseLayer::new(FL_LEN, cfg.fl_encoder, Activation::Relu, rng);
        let mut head = Vec::new();
        let mut width = cfg.head_input_width();
        for &h in &cfg.head_layers {
            head.push(DenseLayer::new(width, h, Activation::Relu, rng));
            width = h;
        }
        head.push(DenseLayer::new(width, 1, Activation::Identity, rng));
        Self {
            conv,
            cnn_dense,
            pl_encoder,
            pl_dense,
            lstm,
            fl_encoder,
            head,
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_params_mut(&mut |_, t| t.fill(0.0));
        z
    }

    pub(crate) fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.weights"), &c.weights));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        for (name, d) in [
            ("cnn_dense", &self.cnn_dense),
            ("pl_encoder", &self.pl_encoder),
            ("pl_dense", &self.pl_dense),
        ] {
            out.push((format!("{name}.weights"), &d.weights));
            out.push((format!("{name}.bias"), &d.bias));
        }
        let l = &self.lstm;
        for (name, t) in [
            ("w_i", &l.w_i),
            ("w_f", &l.w_f),
            ("w_c", &l.w_c),
            ("w_o", &l.w_o),
            ("b_i", &l.b_i),
            ("b_f", &l.b_f),
            ("b_c", &l.b_c),
            ("b_o", &l.b_o),
        ] {
            out.push((format!("lstm.{name}"), t));
        }
        out.push(("fl_encoder.weights".into(), &self.fl_encoder.weights));
        out.push(("fl_encoder.bias".into(), &self.fl_encoder.bias));
        for (i, d) in self.head.iter().enumerate() {
            out.push((format!("head{i}.weights"), &d.weights));
            out.push((format!("head{i}.bias"), &d.bias));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weights);
            out.push(&mut c.bias);
        }
        for d in [&mut self.cnn_dense, &mut self.pl_encoder, &mut self.pl_dense] {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        let l = &mut self.lstm;
        out.extend([
            &mut l.w_i, &mut l.w_f, &mut l.w_c, &mut l.w_o, &mut l.b_i, &mut l.b_f, &mut l.b_c, &mut l.b_o,
        ]);
        out.push(&mut self.fl_encoder.weights);
        out.push(&mut self.fl_encoder.bias);
        for d in &mut self.head {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        out
    }
}

impl Parameterized for HstfParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, t) in self.named() {
            f(&name, t);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let names: Vec<String> = self.named().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(self.tensors_mut()) {
            f(name, t);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PacketCache {
    cnn: CnnCache,
    cnn_h: Vec<f64>,
    /// Present only when the statistics branch is active.
    pl: Option<PlCache>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PlCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowCache {
    /// `None` marks a padding slot, which shares the engine's pad cache.
    packets: Vec<Option<PacketCache>>,
    steps: Vec<LstmStepCache>,
    fl: Option<PlCache>,
    head_inputs: Vec<Vec<f64>>,
    head_outputs: Vec<Vec<f64>>,
    pub logit: f64,
}

/// Forward/backward machinery bound to one parameter snapshot.
pub(crate) struct Engine<'a> {
    cfg: &'a HstfConfig,
    plan: &'a Plan,
    params: &'a HstfParams,
    consts: CnnConstants,
    pad: OnceCell<PacketCache>,
}

/// Gradient accumulator for one batch.
pub(crate) struct Grads {
    pub params: HstfParams,
    scratch: CnnGradScratch,
    pad_embedding: Vec<f64>,
    pad_used: bool,
}

impl Grads {
    pub fn new(params: &HstfParams, plan: &Plan) -> Self {
        Self {
            params: params.zeros_like(),
            scratch: CnnGradScratch::new(params.cnn_dense.outputs(), plan.flat.0),
            pad_embedding: vec![0.0; params.lstm.input()],
            pad_used: false,
        }
    }
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a HstfConfig, plan: &'a Plan, params: &'a HstfParams) -> Self {
        Self {
            cfg,
            plan,
            params,
            consts: CnnConstants::compute(&params.conv, &params.cnn_dense, plan.flat),
            pad: OnceCell::new(),
        }
    }

    fn gate(&self) -> f64 {
        self.cfg.statistics_gate
    }

    fn packet_forward(&self, matrix: &RawFeatureMatrix, pl: &[f64]) -> PacketCache {
        let p = self.params;
        let input = Map::from_matrix(matrix, self.cfg.matrix_rows, self.cfg.matrix_cols);
        let cnn = cnn::cnn_forward(&p.conv, &self.plan.stages, &self.consts, input);
        let mut cnn_h = cnn::dense_forward_map(&p.cnn_dense, &self.consts.dense_colsum, &cnn.output);
        p.cnn_dense.activation.apply_in_place(&mut cnn_h);
        let mut embedding = Vec::with_capacity(self.cfg.embedding_width());
        embedding.extend_from_slice(&cnn_h);
        let pl = if self.gate() != 0.0 {
            let hidden = p.pl_encoder.forward(pl).expect("PL width");
            let out = p.pl_dense.forward(&hidden).expect("PL encoder width");
            embedding.extend(out.iter().map(|v| v * self.gate()));
            Some(PlCache {
                input: pl.to_vec(),
                hidden,
                out,
            })
        } else {
            embedding.resize(self.cfg.embedding_width(), 0.0);
            None
        };
        PacketCache {
            cnn,
            cnn_h,
            pl,
            embedding,
        }
    }

    fn pad_cache(&self) -> &PacketCache {
        self.pad
            .get_or_init(|| self.packet_forward(&RawFeatureMatrix::zeros(), &[0.0; PL_LEN]))
    }

    /// Checks that an encoded flow fits this network.
    pub fn check_input(&self, flow: &EncodedFlow) -> Result<(), ModelError> {
        if flow.flow_size() != self.cfg.flow_size || flow.pls.len() != self.cfg.flow_size {
            return Err(ModelError::ConfigMismatch(format!(
                "flow has {} packet slots, model expects {}",
                flow.flow_size(),
                self.cfg.flow_size
            )));
        }
        if flow.real_packets > flow.flow_size() {
            return Err(ModelError::ConfigMismatch("more real packets than slots".into()));
        }
        Ok(())
    }

    /// Forward pass over a normalized flow; the logit is in the cache.
    pub fn forward(&self, flow: &EncodedFlow) -> Result<FlowCache, ModelError> {
        self.check_input(flow)?;
        let p = self.params;
        let packets: Vec<Option<PacketCache>> = (0..flow.flow_size())
            .map(|t| {
                (t < flow.real_packets)
                    .then(|| self.packet_forward(&flow.matrices[t], flow.pls[t].values()))
            })
            .collect();
        let mut state = LstmState::zeros(p.lstm.hidden());
        let mut steps = Vec::with_capacity(packets.len());
        for slot in &packets {
            let x = match slot {
                Some(c) => &c.embedding,
                None => &self.pad_cache().embedding,
            };
            let (next, cache) = p.lstm.step(&state, x)?;
            state = next;
            steps.push(cache);
        }
        let mut head_in = state.h;
        let fl = if self.gate() != 0.0 {
            let hidden = p.fl_encoder.forward(flow.fl.values())?;
            head_in.extend(hidden.iter().map(|v| v * self.gate()));
            Some(PlCache {
                input: flow.fl.values().to_vec(),
                out: Vec::new(),
                hidden,
            })
        } else {
            head_in.resize(self.cfg.head_input_width(), 0.0);
            None
        };
        let mut head_inputs = Vec::with_capacity(p.head.len());
        let mut head_outputs = Vec::with_capacity(p.head.len());
        let mut x = head_in;
        for layer in &p.head {
            let y = layer.forward(&x)?;
            head_inputs.push(x);
            x = y.clone();
            head_outputs.push(y);
        }
        Ok(FlowCache {
            packets,
            steps,
            fl,
            head_inputs,
            head_outputs,
            logit: x[0],
        })
    }

    pub fn logit(&self, flow: &EncodedFlow) -> Result<f64, ModelError> {
        Ok(self.forward(flow)?.logit)
    }

    fn packet_backward(&self, cache: &PacketCache, d_emb: &[f64], grads: &mut Grads) {
        let p = self.params;
        let width = self.cfg.cnn_dense;
        let g_pre: Vec<f64> = cache
            .cnn_h
            .iter()
            .zip(&d_emb[..width])
            .map(|(&y, &g)| g * p.cnn_dense.activation.derivative_from_output(y))
            .collect();
        if g_pre.iter().any(|&g| g != 0.0) {
            let (dx, dbg) = cnn::dense_backward_map(
                &p.cnn_dense,
                &self.consts.dense_colsum,
                &cache.cnn.output,
                &g_pre,
                &mut grads.params.cnn_dense,
                &mut grads.scratch,
            );
            cnn::cnn_backward(
                &p.conv,
                &self.plan.stages,
                &self.consts,
                &cache.cnn,
                dx,
                dbg,
                &mut grads.params.conv,
            );
        }
        if let Some(pl) = &cache.pl {
            let d_out: Vec<f64> = d_emb[width..].iter().map(|g| g * self.gate()).collect();
            let d_hidden = p.pl_dense.backward(&pl.hidden, &pl.out, &d_out, &mut grads.params.pl_dense);
            p.pl_encoder
                .backward(&pl.input, &pl.hidden, &d_hidden, &mut grads.params.pl_encoder);
        }
    }

    /// Accumulates gradients of a loss whose derivative w.r.t. the logit is
    /// `d_logit`. Call [`Engine::finish`] once per batch afterwards.
    pub fn backward(&self, cache: &FlowCache, d_logit: f64, grads: &mut Grads) {
        let p = self.params;
        let mut d = vec![d_logit];
        for (i, layer) in p.head.iter().enumerate().rev() {
            d = layer.backward(&cache.head_inputs[i], &cache.head_outputs[i], &d, &mut grads.params.head[i]);
        }
        let hidden = p.lstm.hidden();
        if let Some(fl) = &cache.fl {
            let d_fl: Vec<f64> = d[hidden..].iter().map(|g| g * self.gate()).collect();
            p.fl_encoder
                .backward(&fl.input, &fl.hidden, &d_fl, &mut grads.params.fl_encoder);
        }
        d.truncate(hidden);
        let mut dh = d;
        let mut dc = vec![0.0; hidden];
        for t in (0..cache.steps.len()).rev() {
            let (dh_prev, dc_prev, dx) = p.lstm.backward_step(&cache.steps[t], &dh, &dc, &mut grads.params.lstm);
            match &cache.packets[t] {
                Some(pc) => self.packet_backward(pc, &dx, grads),
                None => {
                    grads.pad_used = true;
                    for (a, b) in grads.pad_embedding.iter_mut().zip(&dx) {
                        *a += b;
                    }
                }
            }
            dh = dh_prev;
            dc = dc_prev;
        }
    }

    /// Backpropagates the pooled padding-slot gradient and flushes deferred
    /// terms.
    pub fn finish(&self, grads: &mut Grads) {
        if grads.pad_used {
            let d = std::mem::replace(&mut grads.pad_embedding, vec![0.0; self.params.lstm.input()]);
            self.packet_backward(self.pad_cache(), &d, grads);
            grads.pad_used = false;
        }
        grads.scratch.flush(&mut grads.params.cnn_dense, self.plan.flat.0);
    }
}

/// Summed cross-entropy over labeled, already normalized `flows` and its
/// analytic gradient (one tensor per parameter, in [`HstfParams::named`]
/// order).
pub fn loss_and_gradients(
    config: &HstfConfig,
    params: &HstfParams,
    flows: &[EncodedFlow],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let plan = config.plan()?;
    let engine = Engine::new(config, &plan, params);
    let mut grads = Grads::new(params, &plan);
    let mut total = 0.0;
    for f in flows {
        let target = f
            .label
            .target()
            .ok_or_else(|| ModelError::ConfigMismatch("gradient check needs labeled flows".into()))?;
        let cache = engine.forward(f)?;
        let (loss, dz) = bce_with_logit(cache.logit, target);
        total += loss;
        engine.backward(&cache, dz, &mut grads);
    }
    engine.finish(&mut grads);
    Ok((total, grads.params.named().into_iter().map(|(_, t)| t.clone()).collect()))
}

/// Central finite-difference check of [`loss_and_gradients`] over every
/// parameter element.
pub fn check_gradients(
    config: &HstfConfig,
    params: &mut HstfParams,
    flows: &[EncodedFlow],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, analytic) = loss_and_gradients(config, params, flows)?;
    let plan = config.plan()?;
    let loss = |p: &HstfParams| {
        let engine = Engine::new(config, &plan, p);
        flows
            .iter()
            .map(|f| {
                let z = engine.logit(f).expect("shapes checked above");
                bce_with_logit(z, f.label.target().expect("labels checked above")).0
            })
            .sum()
    };
    Ok(finite_diff_check(params, loss, &analytic, epsilon, tolerance, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FlowLevelVector, PacketLevelVector};
    use crate::http::Label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_flow(rng: &mut ChaCha8Rng, flow_size: usize, real: usize) -> EncodedFlow {
        let matrices = (0..flow_size)
            .map(|t| {
                if t >= real {
                    return RawFeatureMatrix::zeros();
                }
                let rows = rng.random_range(1..7);
                let lines: Vec<Vec<u8>> = (0..rows)
                    .map(|_| (0..rng.random_range(1..20)).map(|_| rng.random_range(1..=255)).collect())
                    .collect();
                RawFeatureMatrix::from_lines(lines.iter().map(Vec::as_slice))
            })
            .collect();
        let pls = (0..flow_size)
            .map(|t| {
                if t >= real {
                    PacketLevelVector::zeros()
                } else {
                    PacketLevelVector::from_values((0..PL_LEN).map(|_| rng.random::<f64>()).collect()).unwrap()
                }
            })
            .collect();
        EncodedFlow {
            matrices,
            pls,
            fl: FlowLevelVector::from_values((0..FL_LEN).map(|_| rng.random::<f64>()).collect()).unwrap(),
            label: if rng.random() { Label::Malicious } else { Label::Benign },
            real_packets: real,
        }
    }

    fn randomize_biases(params: &mut HstfParams, rng: &mut ChaCha8Rng) {
        params.visit_params_mut(&mut |name, t| {
            if name.contains(".b") {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.2..0.2);
                }
            }
        });
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_config() {
        let cfg = HstfConfig::tiny();
        let plan = cfg.plan().unwrap();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = HstfParams::init(&cfg, &plan, &mut rng);
            randomize_biases(&mut params, &mut rng);
            let flows = vec![random_flow(&mut rng, 2, 1), random_flow(&mut rng, 2, 2)];
            let report = check_gradients(&cfg, &mut params, &flows, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "seed {seed}: {:?}", report.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_bias_zero_input_gives_half() {
        let cfg = HstfConfig::tiny();
        let plan = cfg.plan().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = HstfParams::init(&cfg, &plan, &mut rng);
        let engine = Engine::new(&cfg, &plan, &params);
        let flow = EncodedFlow {
            matrices: vec![RawFeatureMatrix::zeros(); 2],
            pls: vec![PacketLevelVector::zeros(); 2],
            fl: FlowLevelVector::zeros(),
            label: Label::Benign,
            real_packets: 0,
        };
        assert_eq!(engine.logit(&flow).unwrap(), 0.0);
        let pad = engine.pad_cache();
        assert!(pad.embedding.iter().all(|&v| v == 0.0));
        assert_eq!(pad.embedding.len(), cfg.embedding_width());
    }

    #[test]
    fn closed_gate_never_reads_statistics() {
        let cfg = HstfConfig {
            statistics_gate: 0.0,
            ..HstfConfig::tiny()
        };
        let plan = cfg.plan().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = HstfParams::init(&cfg, &plan, &mut rng);
        let engine = Engine::new(&cfg, &plan, &params);
        let clean = random_flow(&mut rng, 2, 2);
        let mut poisoned = clean.clone();
        for pl in &mut poisoned.pls {
            pl.values_mut().fill(f64::NAN);
        }
        poisoned.fl.values_mut().fill(f64::NAN);
        let a = engine.logit(&clean).unwrap();
        let b = engine.logit(&poisoned).unwrap();
        assert!(b.is_finite());
        assert_eq!(a, b);
        let mut grads = Grads::new(&params, &plan);
        let cache = engine.forward(&poisoned).unwrap();
        engine.backward(&cache, 1.0, &mut grads);
        engine.finish(&mut grads);
        assert!(grads.params.pl_encoder.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.params.fl_encoder.weights.is_finite());
    }

    #[test]
    fn slot_count_mismatch_is_reported() {
        let cfg = HstfConfig::tiny();
        let plan = cfg.plan().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = HstfParams::init(&cfg, &plan, &mut rng);
        let engine = Engine::new(&cfg, &plan, &params);
        let flow = random_flow(&mut rng, 3, 3);
        assert!(matches!(engine.forward(&flow), Err(ModelError::ConfigMismatch(_))));
    }
}
