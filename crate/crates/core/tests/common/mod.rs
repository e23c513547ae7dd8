#![allow(dead_code)]

use hstf::capture::Timestamp;
use hstf::experiments::{generate_corpus, GeneratorProfiles};
use hstf::features::{EncodedFlow, FlowLevelVector, PacketLevelVector, RawFeatureMatrix, FL_LEN, PL_LEN};
use hstf::http::{Flow, HttpMessage, HttpVersion, Label};
use hstf::nn::{Activation, LstmCell, LstmState, Tensor};
use rand::Rng;

/// Seed of the shared synthetic corpus.
pub const CORPUS_SEED: u64 = 1;
pub const CORPUS_BENIGN: usize = 8400;
pub const CORPUS_MALICIOUS: usize = 2143;

pub fn default_corpus() -> Vec<Flow> {
    generate_corpus(&GeneratorProfiles::default(), CORPUS_BENIGN, CORPUS_MALICIOUS, CORPUS_SEED).unwrap()
}

fn random_text<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| char::from(rng.random_range(0x21u8..0x7f))).collect()
}

fn random_message<R: Rng>(rng: &mut R, headers: usize, body: usize, t: u64) -> HttpMessage {
    let version = [HttpVersion::V1_0, HttpVersion::V1_1][rng.random_range(0..2)];
    let mut m = if rng.random_bool(0.5) {
        let method = ["GET", "POST", "HEAD", "PUT", "OPTIONS"][rng.random_range(0..5)];
        let len = rng.random_range(0..300);
        HttpMessage::request(method, &format!("/{}", random_text(rng, len)), version)
    } else {
        HttpMessage::response([200, 204, 301, 404, 500, 101][rng.random_range(0..6)], version)
    };
    m.headers = (0..headers)
        .map(|_| {
            let (n, v) = (rng.random_range(1..30), rng.random_range(0..400));
            (random_text(rng, n), random_text(rng, v))
        })
        .collect();
    m.body = (0..body).map(|_| rng.random()).collect();
    m.body_len = body;
    m.wire_length = hstf::http::serialize_message(&m).len();
    m.ttl = rng.random();
    m.timestamp = Timestamp::from_micros(t);
    m
}

/// Flow shapes cycled through by [`random_flow`].
pub const FLOW_CASES: usize = 5;

/// Case 0: empty bodies; 1: no headers; 2: 47 to 60 headers; 3: 50 to 70
/// messages; otherwise unconstrained.
pub fn random_flow<R: Rng>(rng: &mut R, case: usize) -> Flow {
    let n = match case % FLOW_CASES {
        3 => rng.random_range(50..=70),
        _ => rng.random_range(1..=8),
    };
    let mut t = rng.random_range(0..1_000_000_000u64);
    let messages = (0..n)
        .map(|_| {
            t += rng.random_range(0..5_000_000);
            let headers = match case % FLOW_CASES {
                1 => 0,
                2 => rng.random_range(47..=60),
                _ => rng.random_range(0..12),
            };
            let body = if case % FLOW_CASES == 0 { 0 } else { rng.random_range(0..2000) };
            random_message(rng, headers, body, t)
        })
        .collect();
    Flow {
        flow_id: format!("case{case}"),
        label: [Label::Benign, Label::Malicious, Label::Unlabeled][rng.random_range(0..3)],
        lossy: false,
        segments: rng.random_bool(0.5).then(|| n + rng.random_range(0..20)),
        messages,
    }
}

/// Proportion identities of FL (1-indexed positions); returns violations.
pub fn fl_closure_violations(flow: &Flow, fl: &FlowLevelVector, tol: f64) -> Vec<String> {
    let msgs = &flow.messages[..flow.messages.len().min(50)];
    let reqs = msgs.iter().filter(|m| m.is_request()).count();
    let resps = msgs.len() - reqs;
    let bytes: usize = msgs.iter().map(|m| m.wire_length).sum();
    let sum = |a: usize, b: usize| (a..=b).map(|p| fl.at(p)).sum::<f64>();
    let mut checks = vec![("FL[2]+FL[3]", sum(2, 3), 1.0)];
    checks.push(("FL[4]+FL[5]", sum(4, 5), if reqs > 0 { 1.0 } else { 0.0 }));
    checks.push(("FL[6]+FL[7]", sum(6, 7), if resps > 0 { 1.0 } else { 0.0 }));
    checks.push(("FL[108]+FL[109]", sum(108, 109), if bytes > 0 { 1.0 } else { 0.0 }));
    checks.push(("FL[162..165]", sum(162, 165), if reqs > 0 { 1.0 } else { 0.0 }));
    checks.push(("FL[166..169]", sum(166, 169), if resps > 0 { 1.0 } else { 0.0 }));
    let mut bad: Vec<String> = checks
        .into_iter()
        .filter(|(_, got, want)| (got - want).abs() > tol)
        .map(|(name, got, want)| format!("{name} = {got}, expected {want}"))
        .collect();
    if fl.at(1) != msgs.len() as f64 {
        bad.push(format!("FL[1] = {}, expected {}", fl.at(1), msgs.len()));
    }
    if !(fl.at(170) > 0.0 && fl.at(170) <= 1.0) {
        bad.push(format!("FL[170] = {} outside (0, 1]", fl.at(170)));
    }
    bad
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Direct six-loop convolution over `[C, H, W]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    (k, kh, kw): (usize, usize, usize),
    (sh, sw): (usize, usize),
    a: Activation,
) -> Vec<f64> {
    let oh = (h - kh) / sh + 1;
    let ow = (w - kw) / sw + 1;
    let mut out = vec![0.0; k * oh * ow];
    for kk in 0..k {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = bias[kk];
                for ch in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            s += weights[((kk * c + ch) * kh + u) * kw + v] * input[(ch * h + i * sh + u) * w + j * sw + v];
                        }
                    }
                }
                out[(kk * oh + i) * ow + j] = act(a, s);
            }
        }
    }
    out
}

pub fn naive_pool(input: &[f64], (c, h, w): (usize, usize, usize), (ph, pw): (usize, usize), (sh, sw): (usize, usize)) -> Vec<f64> {
    let oh = (h - ph) / sh + 1;
    let ow = (w - pw) / sw + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for u in 0..ph {
                    for v in 0..pw {
                        m = m.max(input[(ch * h + i * sh + u) * w + j * sw + v]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn naive_dense(x: &[f64], weights: &[f64], bias: &[f64], outputs: usize, a: Activation) -> Vec<f64> {
    (0..outputs)
        .map(|o| {
            let mut s = bias[o];
            for (i, xi) in x.iter().enumerate() {
                s += weights[o * x.len() + i] * xi;
            }
            act(a, s)
        })
        .collect()
}

/// One LSTM step written element by element.
pub fn scalar_lstm_step(cell: &LstmCell, state: &LstmState, x: &[f64]) -> LstmState {
    let hidden = state.h.len();
    let cols = hidden + x.len();
    let z = |w: &Tensor, b: &Tensor, r: usize| {
        let mut s = b.data()[r];
        for col in 0..cols {
            let v = if col < hidden { state.h[col] } else { x[col - hidden] };
            s += w.data()[r * cols + col] * v;
        }
        s
    };
    let mut c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for r in 0..hidden {
        let i = sigmoid(z(&cell.w_i, &cell.b_i, r));
        let f = sigmoid(z(&cell.w_f, &cell.b_f, r));
        let g = z(&cell.w_c, &cell.b_c, r).tanh();
        let o = sigmoid(z(&cell.w_o, &cell.b_o, r));
        c[r] = f * state.c[r] + i * g;
        h[r] = o * c[r].tanh();
    }
    LstmState { c, h }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Labeled flow with random raw bytes in `real` slots and random
/// statistics in [0, 1).
pub fn random_encoded<R: Rng>(rng: &mut R, flow_size: usize, real: usize) -> EncodedFlow {
    let matrices = (0..flow_size)
        .map(|t| {
            if t >= real {
                return RawFeatureMatrix::zeros();
            }
            let lines: Vec<Vec<u8>> = (0..rng.random_range(1..7))
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
        label: if rng.random_bool(0.5) { Label::Malicious } else { Label::Benign },
        real_packets: real,
    }
}
