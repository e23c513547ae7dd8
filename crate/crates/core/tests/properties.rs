mod common;

use std::collections::HashSet;

use hstf::capture::reassemble;
use hstf::experiments::{compute_metrics, encode_all, flow_to_segments, generate_corpus, GeneratorProfiles, SynthOptions};
use hstf::features::{encode_flow, FL_LEN, MATRIX_COLS, MATRIX_ROWS, PL_LEN};
use hstf::http::{build_flow, Label};
use hstf::model::{predict, read_model, train, write_model, HstfConfig};
use hstf::nn::{conv_forward, dense_forward, lstm_step, max_pool, Activation, ConvLayer, DenseLayer, LstmCell, LstmState};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTS: [Activation; 4] = [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn encoding_has_fixed_shape_and_closed_proportions(
        seed in any::<u64>(),
        case in 0..common::FLOW_CASES,
        packet_size in prop::sample::select(vec![1usize, 100, 200, 400, 1000, 4000]),
        flow_size in 1usize..=32,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow = common::random_flow(&mut rng, case);
        let e = encode_flow(&flow, packet_size, flow_size).unwrap();
        prop_assert_eq!(e.matrices.len(), flow_size);
        prop_assert_eq!(e.pls.len(), flow_size);
        prop_assert_eq!(e.real_packets, flow.messages.len().min(flow_size));
        for m in &e.matrices {
            prop_assert_eq!(m.shape(), (MATRIX_ROWS, MATRIX_COLS));
        }
        for p in &e.pls {
            prop_assert_eq!(p.len(), PL_LEN);
            prop_assert!(p.values().iter().all(|v| v.is_finite()));
        }
        prop_assert_eq!(e.fl.len(), FL_LEN);
        let bad = common::fl_closure_violations(&flow, &e.fl, 1e-9);
        prop_assert!(bad.is_empty(), "{:?}", bad);
        prop_assert_eq!(e.label, flow.label);
    }

    #[test]
    fn conv_and_pool_match_direct_loops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = (rng.random_range(1..4), rng.random_range(1..5));
        let (kh, kw) = (rng.random_range(1..5), rng.random_range(1..8));
        let (h, w) = (rng.random_range(kh..kh + 10), rng.random_range(kw..kw + 14));
        let stride = (rng.random_range(1..3), rng.random_range(1..3));
        let a = ACTS[rng.random_range(0..4)];
        let input = common::random_tensor(&mut rng, &[c, h, w]);
        let layer = ConvLayer {
            weights: common::random_tensor(&mut rng, &[k, c, kh, kw]),
            bias: common::random_tensor(&mut rng, &[k]),
            activation: a,
        };
        let got = conv_forward(&input, &layer, stride).unwrap();
        let want = common::naive_conv(input.data(), (c, h, w), layer.weights.data(), layer.bias.data(), (k, kh, kw), stride, a);
        prop_assert!(common::max_abs_diff(got.data(), &want) <= 1e-12);

        let (ph, pw) = (rng.random_range(1..=h.min(3)), rng.random_range(1..=w.min(3)));
        let ps = (rng.random_range(1..=ph), rng.random_range(1..=pw));
        let pooled = max_pool(&input, (ph, pw), ps).unwrap();
        prop_assert_eq!(pooled.data(), &common::naive_pool(input.data(), (c, h, w), (ph, pw), ps)[..]);
    }

    #[test]
    fn dense_and_lstm_match_scalar_formulas(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ni, no) = (rng.random_range(1..40), rng.random_range(1..20));
        let a = ACTS[rng.random_range(0..4)];
        let dense = DenseLayer {
            weights: common::random_tensor(&mut rng, &[no, ni]),
            bias: common::random_tensor(&mut rng, &[no]),
            activation: a,
        };
        let x = common::random_tensor(&mut rng, &[ni]);
        let got = dense_forward(&x, &dense).unwrap();
        let want = common::naive_dense(x.data(), dense.weights.data(), dense.bias.data(), no, a);
        prop_assert!(common::max_abs_diff(got.data(), &want) <= 1e-12);

        let (input_w, hidden) = (rng.random_range(1..12), rng.random_range(1..10));
        let cols = input_w + hidden;
        let mut t = |shape: &[usize]| common::random_tensor(&mut rng, shape);
        let cell = LstmCell {
            w_i: t(&[hidden, cols]),
            w_f: t(&[hidden, cols]),
            w_c: t(&[hidden, cols]),
            w_o: t(&[hidden, cols]),
            b_i: t(&[hidden]),
            b_f: t(&[hidden]),
            b_c: t(&[hidden]),
            b_o: t(&[hidden]),
        };
        let state = LstmState { c: t(&[hidden]).into_data(), h: t(&[hidden]).into_data() };
        let x = t(&[input_w]).into_data();
        let got = lstm_step(&cell, &state, &x).unwrap();
        let want = common::scalar_lstm_step(&cell, &state, &x);
        prop_assert!(common::max_abs_diff(&got.c, &want.c) <= 1e-12);
        prop_assert!(common::max_abs_diff(&got.h, &want.h) <= 1e-12);
        prop_assert!(got.h.iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn zero_weight_lstm_halves_the_cell(seed in any::<u64>(), scale in 0.0f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input_w, hidden) = (rng.random_range(1..12), rng.random_range(1..10));
        let cell = LstmCell::zeros(input_w, hidden);
        let prev: Vec<f64> = (0..hidden).map(|_| rng.random_range(-scale..=scale)).collect();
        let state = LstmState { c: prev.clone(), h: vec![0.3; hidden] };
        let next = lstm_step(&cell, &state, &vec![1.0; input_w]).unwrap();
        for (c, p) in next.c.iter().zip(&prev) {
            prop_assert_eq!(*c, 0.5 * p);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_flows_survive_any_segment_order(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let flows = generate_corpus(&GeneratorProfiles::default(), 2, 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        for f in &flows {
            let mut segments = flow_to_segments(f, &SynthOptions::default(), &mut rng).unwrap();
            segments.shuffle(&mut rng);
            let streams = reassemble(segments);
            prop_assert_eq!(streams.len(), 1);
            let back = build_flow(&streams[0], f.label).unwrap();
            prop_assert_eq!(&back, f);
        }
    }

    #[test]
    fn generator_keeps_labels_and_unique_ids(seed in any::<u64>(), benign in 0usize..20, malicious in 0usize..20) {
        let flows = generate_corpus(&GeneratorProfiles::default(), benign, malicious, seed).unwrap();
        prop_assert_eq!(flows.len(), benign + malicious);
        prop_assert_eq!(flows.iter().filter(|f| f.label == Label::Benign).count(), benign);
        prop_assert_eq!(flows.iter().filter(|f| f.label == Label::Malicious).count(), malicious);
        let ids: HashSet<_> = flows.iter().map(|f| f.flow_id.as_str()).collect();
        prop_assert_eq!(ids.len(), flows.len());
        prop_assert!(flows.iter().all(|f| !f.messages.is_empty()));
    }
}

#[test]
fn small_pipeline_trains_saves_and_reloads() {
    let flows = generate_corpus(&GeneratorProfiles::default(), 120, 40, 21).unwrap();
    let cfg = HstfConfig {
        epochs: 2,
        batch_size: 16,
        ..HstfConfig::tiny()
    };
    let encoded = encode_all(&flows, cfg.packet_size, cfg.flow_size).unwrap();
    let (model, history) = train(&encoded, &cfg, None).unwrap();
    assert_eq!(history.epochs.len(), 2);
    assert!(history.epochs.iter().all(|e| e.loss.is_finite()));

    let back = read_model(&write_model(&model).unwrap()).unwrap();
    let a = model.scores(&encoded).unwrap();
    let b = back.scores(&encoded).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|s| (0.0..=1.0).contains(s)));

    let p = predict(&flows[0], &back, 0.5).unwrap();
    assert_eq!(p.score, a[0]);
    assert_eq!(p.label == Label::Malicious, a[0] >= 0.5);

    let preds: Vec<bool> = a.iter().map(|s| *s >= 0.5).collect();
    let truth: Vec<bool> = flows.iter().map(|f| f.label == Label::Malicious).collect();
    let m = compute_metrics(&preds, &truth).unwrap();
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, flows.len() as u64);
}
