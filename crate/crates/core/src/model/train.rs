use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{Engine, Grads};
use super::{HstfConfig, HstfModel, ModelError};
use crate::experiments::{compute_metrics, Metrics};
use crate::features::{normalize_in_place, EncodedFlow, NormalizationStats};
use crate::nn::{bce_with_logit, sigmoid, Optimizer, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss.
    pub loss: f64,
    /// Metrics on the validation flows, when given.
    pub validation: Option<Metrics>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.stopped_early == other.stopped_early
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.validation == b.validation
            })
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

fn labeled(flows: &[EncodedFlow]) -> Vec<(&EncodedFlow, f64)> {
    flows
        .iter()
        .filter_map(|f| f.label.target().map(|t| (f, t)))
        .collect()
}

/// Evaluates a model on labeled flows at threshold 0.5.
pub(crate) fn evaluate_normalized(
    model: &HstfModel,
    flows: &[EncodedFlow],
) -> Result<Metrics, ModelError> {
    let labeled = labeled(flows);
    let plan = model.config.plan()?;
    let engine = Engine::new(&model.config, &plan, &model.params);
    let mut preds = Vec::with_capacity(labeled.len());
    let mut truth = Vec::with_capacity(labeled.len());
    for (f, t) in labeled {
        preds.push(sigmoid(engine.logit(f)?) >= 0.5);
        truth.push(t == 1.0);
    }
    compute_metrics(&preds, &truth).map_err(|e| ModelError::ConfigMismatch(e.to_string()))
}

/// Mini-batch training with binary cross-entropy. Unlabeled flows are
/// ignored. `validation` (raw, unnormalized) is scored after every epoch.
pub fn train(
    dataset: &[EncodedFlow],
    cfg: &HstfConfig,
    validation: Option<&[EncodedFlow]>,
) -> Result<(HstfModel, TrainHistory), ModelError> {
    let plan = cfg.plan()?;
    let data = labeled(dataset);
    let positives = data.iter().filter(|(_, t)| *t == 1.0).count();
    if positives == 0 || positives == data.len() {
        return Err(ModelError::SingleClassDataset);
    }
    let mut model = HstfModel::new(cfg.clone())?;
    for (f, _) in &data {
        if f.flow_size() != cfg.flow_size {
            return Err(ModelError::ConfigMismatch(format!(
                "flow has {} packet slots, config expects {}",
                f.flow_size(),
                cfg.flow_size
            )));
        }
    }
    model.stats = NormalizationStats::fit(data.iter().map(|(f, _)| *f))?;
    let train_set: Vec<(EncodedFlow, f64)> = data
        .iter()
        .map(|(f, t)| {
            let mut f = (*f).clone();
            normalize_in_place(&mut f, &model.stats);
            (f, *t)
        })
        .collect();
    let validation: Option<Vec<EncodedFlow>> =
        validation.map(|v| v.iter().map(|f| model.normalize(f)).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = {
                let engine = Engine::new(&model.config, &plan, &model.params);
                let mut grads = Grads::new(&model.params, &plan);
                for &i in batch {
                    let (flow, target) = &train_set[i];
                    let cache = engine.forward(flow)?;
                    let (loss, dz) = bce_with_logit(cache.logit, *target);
                    loss_sum += loss;
                    engine.backward(&cache, dz, &mut grads);
                }
                engine.finish(&mut grads);
                grads
            };
            let scale = 1.0 / batch.len() as f64;
            let mut g = grads.params.tensors_mut();
            for t in g.iter_mut() {
                t.scale(scale);
            }
            let g: Vec<&Tensor> = g.into_iter().map(|t| &*t).collect();
            optimizer.step(&mut model.params.tensors_mut(), &g)?;
        }
        let loss = loss_sum / train_set.len() as f64;
        let metrics = match &validation {
            Some(v) if !v.is_empty() => Some(evaluate_normalized(&model, v)?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            validation: metrics,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let (Some(target), Some(m)) = (cfg.target_f1, metrics) {
            if m.f1 >= target && epoch < cfg.epochs {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((model, history))
}
