//! Train/evaluate drivers: single runs, ablation, sweeps and the imbalance
//! study, with CSV output.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::{split_indices, ExperimentError, Metrics, ProportionSpec};
use crate::features::{encode_flow, EncodedFlow};
use crate::http::Flow;
use crate::model::{train, HstfConfig, HstfModel, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: Metrics,
    pub train_seconds: f64,
    pub test_seconds: f64,
    #[serde(skip)]
    pub history: TrainHistory,
}

/// Scores `test` and computes metrics at threshold 0.5.
pub fn evaluate(model: &HstfModel, test: &[EncodedFlow]) -> Result<Metrics, ExperimentError> {
    let scores = model.scores(test)?;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for (s, f) in scores.iter().zip(test) {
        if let Some(t) = f.label.target() {
            preds.push(*s >= 0.5);
            truth.push(t == 1.0);
        }
    }
    super::compute_metrics(&preds, &truth)
}

pub fn encode_all(flows: &[Flow], packet_size: usize, flow_size: usize) -> Result<Vec<EncodedFlow>, ExperimentError> {
    flows
        .iter()
        .map(|f| Ok(encode_flow(f, packet_size, flow_size)?))
        .collect()
}

/// One split, one training run, one evaluation. `track_epochs` scores the
/// test set after every epoch.
pub fn run_once(
    flows: &[Flow],
    encoded: &[EncodedFlow],
    spec: ProportionSpec,
    cfg: &HstfConfig,
    seed: u64,
    track_epochs: bool,
) -> Result<RunOutcome, ExperimentError> {
    let labels: Vec<_> = flows.iter().map(|f| f.label).collect();
    let split = split_indices(&labels, spec, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| encoded[i].clone()).collect::<Vec<_>>();
    let (train_set, test_set) = (pick(&split.train), pick(&split.test));
    let cfg = HstfConfig { seed, ..cfg.clone() };
    let started = Instant::now();
    let (model, history) = train(
        &train_set,
        &cfg,
        (track_epochs || cfg.target_f1.is_some()).then_some(test_set.as_slice()),
    )?;
    let train_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let metrics = evaluate(&model, &test_set)?;
    Ok(RunOutcome {
        seed,
        metrics,
        train_seconds,
        test_seconds: started.elapsed().as_secs_f64(),
        history,
    })
}

pub fn repeat_seeds(seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats.max(1) as u64).map(|r| seed.wrapping_add(r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: u64,
    pub enabled: RunOutcome,
    pub disabled: RunOutcome,
}

/// Trains with the statistics gate open and closed under identical seeds.
pub fn run_ablation(
    flows: &[Flow],
    cfg: &HstfConfig,
    spec: ProportionSpec,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, ExperimentError> {
    let encoded = encode_all(flows, cfg.packet_size, cfg.flow_size)?;
    let gate = if cfg.statistics_gate == 0.0 { 1.0 } else { cfg.statistics_gate };
    let on = HstfConfig { statistics_gate: gate, ..cfg.clone() };
    let off = HstfConfig { statistics_gate: 0.0, ..cfg.clone() };
    seeds
        .iter()
        .map(|&seed| {
            Ok(AblationRow {
                seed,
                enabled: run_once(flows, &encoded, spec, &on, seed, false)?,
                disabled: run_once(flows, &encoded, spec, &off, seed, false)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PacketSize,
    FlowSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PacketSize => "packet_size",
            SweepAxis::FlowSize => "flow_size",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "packet_size" | "packet-size" => Ok(SweepAxis::PacketSize),
            "flow_size" | "flow-size" => Ok(SweepAxis::FlowSize),
            _ => Err(ExperimentError::BadArgument(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// Mean metrics and times of one table row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub key: String,
    pub metrics: Metrics,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub runs: Vec<RunOutcome>,
}

fn summarize(key: String, runs: Vec<RunOutcome>) -> TableRow {
    let n = runs.len().max(1) as f64;
    TableRow {
        key,
        metrics: Metrics::mean(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>()),
        train_seconds: runs.iter().map(|r| r.train_seconds).sum::<f64>() / n,
        test_seconds: runs.iter().map(|r| r.test_seconds).sum::<f64>() / n,
        runs,
    }
}

/// One row per value; the other axis stays at its configured value.
pub fn run_sweep(
    flows: &[Flow],
    axis: SweepAxis,
    values: &[usize],
    cfg: &HstfConfig,
    spec: ProportionSpec,
    seeds: &[u64],
) -> Result<Vec<TableRow>, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::BadArgument("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let cfg = match axis {
                SweepAxis::PacketSize => HstfConfig { packet_size: v, ..cfg.clone() },
                SweepAxis::FlowSize => HstfConfig { flow_size: v, ..cfg.clone() },
            };
            let encoded = encode_all(flows, cfg.packet_size, cfg.flow_size)?;
            let runs = seeds
                .iter()
                .map(|&s| run_once(flows, &encoded, spec, &cfg, s, false))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(summarize(v.to_string(), runs))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub proportion: String,
    pub epoch: usize,
    /// Mean recall over seeds that reached this epoch.
    pub recall: f64,
}

/// Metrics per proportion plus recall-by-epoch curves on the test set.
pub fn run_imbalance(
    flows: &[Flow],
    specs: &[ProportionSpec],
    cfg: &HstfConfig,
    seeds: &[u64],
) -> Result<(Vec<TableRow>, Vec<CurvePoint>), ExperimentError> {
    let encoded = encode_all(flows, cfg.packet_size, cfg.flow_size)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &spec in specs {
        let runs = seeds
            .iter()
            .map(|&s| run_once(flows, &encoded, spec, cfg, s, true))
            .collect::<Result<Vec<_>, _>>()?;
        let epochs = runs.iter().map(|r| r.history.epochs.len()).max().unwrap_or(0);
        for e in 0..epochs {
            let recalls: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.history.epochs.get(e).and_then(|x| x.validation).map(|m| m.recall))
                .collect();
            curves.push(CurvePoint {
                proportion: spec.to_string(),
                epoch: e + 1,
                recall: recalls.iter().sum::<f64>() / recalls.len().max(1) as f64,
            });
        }
        rows.push(summarize(spec.to_string(), runs));
    }
    Ok((rows, curves))
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

/// Columns: `<key_name>,precision,recall,f1,train_time_s,test_time_s`.
pub fn write_table_csv<W: Write>(w: W, key_name: &str, rows: &[TableRow]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([key_name, "precision", "recall", "f1", "train_time_s", "test_time_s"])?;
    for r in rows {
        out.write_record([
            r.key.clone(),
            f4(r.metrics.precision),
            f4(r.metrics.recall),
            f4(r.metrics.f1),
            f4(r.train_seconds),
            f4(r.test_seconds),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_curves_csv<W: Write>(w: W, points: &[CurvePoint]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["proportion", "epoch", "recall"])?;
    for p in points {
        out.write_record([p.proportion.clone(), p.epoch.to_string(), f4(p.recall)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(w: W, rows: &[AblationRow]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["statistics", "seed", "precision", "recall", "f1", "train_time_s", "test_time_s"])?;
    for r in rows {
        for (name, o) in [("enabled", &r.enabled), ("disabled", &r.disabled)] {
            out.write_record([
                name.to_string(),
                r.seed.to_string(),
                f4(o.metrics.precision),
                f4(o.metrics.recall),
                f4(o.metrics.f1),
                f4(o.train_seconds),
                f4(o.test_seconds),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Columns: `epoch,loss,precision,recall,f1,seconds` (metrics empty when no
/// validation set was scored).
pub fn write_history_csv<W: Write>(w: W, history: &TrainHistory) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss", "precision", "recall", "f1", "seconds"])?;
    for e in &history.epochs {
        let (p, r, f) = match e.validation {
            Some(m) => (f4(m.precision), f4(m.recall), f4(m.f1)),
            None => (String::new(), String::new(), String::new()),
        };
        out.write_record([e.epoch.to_string(), f4(e.loss), p, r, f, f4(e.seconds)])?;
    }
    out.flush()?;
    Ok(())
}
