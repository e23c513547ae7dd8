//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success, `--help`, `--version` |
//! | 1 | bad arguments or any other failure |
//! | 2 | unreadable input (capture, flows, model, profile, config) |
//! | 3 | output could not be written |
//! | 4 | the training data holds a single class |
//! | 5 | model file does not match the requested configuration |

mod args;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

pub use args::{AxisArg, Cli, Command, GlobalArgs, LabelArg, TrainArgs};

use crate::capture::streams_from_capture;
use crate::experiments::{
    self, corpus_stats, encode_all, evaluate, generate_corpus, repeat_seeds, split_indices, write_corpus_pcap,
    ExperimentError, GeneratorProfiles, SynthOptions,
};
use crate::features::{write_encoded_dataset_file, FeatureError};
use crate::http::{build_flow, mask_flow, parse_messages_with_report, Flow, HttpError, Label, MaskConfig};
use crate::model::{self, load_model, save_model, HstfConfig, HstfModel, ModelError};

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(2, format!("cannot read {}: {e}", path.display()))
    }

    fn output(path: Option<&Path>, e: impl std::fmt::Display) -> Self {
        let what = path.map_or_else(|| "stdout".to_string(), |p| p.display().to_string());
        Self::new(3, format!("cannot write {what}: {e}"))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::SingleClassDataset => 4,
            ModelError::ConfigMismatch(_) | ModelError::VersionMismatch { .. } => 5,
            _ => 1,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model(m) => m.into(),
            other => Self::new(1, other.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        Self::new(1, e.to_string())
    }
}

type CliResult = Result<(), CliError>;

struct Io<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
    quiet: bool,
}

impl Io<'_> {
    fn note(&mut self, msg: impl std::fmt::Display) {
        if !self.quiet {
            let _ = writeln!(self.stderr, "{msg}");
        }
    }
}

/// Parses `args` (including the program name) and runs against the process
/// stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    1
                }
            };
        }
    };
    let mut io = Io {
        stdout,
        stderr,
        quiet: cli.global.quiet,
    };
    match dispatch(&cli, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: &Cli, io: &mut Io) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { pcap, label, mask } => cmd_ingest(g, io, pcap, (*label).into(), *mask),
        Command::Gen {
            benign,
            malicious,
            profiles,
            pcap,
            manifest,
        } => cmd_gen(g, io, *benign, *malicious, profiles.as_deref(), pcap.as_deref(), manifest.as_deref()),
        Command::Extract { flows } => cmd_extract(g, io, flows),
        Command::Train { flows, train } => cmd_train(g, io, flows, train),
        Command::Eval {
            model,
            flows,
            threshold,
        } => cmd_eval(g, io, model, flows, *threshold),
        Command::Predict {
            model,
            flows,
            threshold,
        } => cmd_predict(g, io, model, flows, *threshold),
        Command::Sweep {
            flows,
            axis,
            values,
            train,
        } => {
            let cfg = resolve_config(g, train)?;
            let flows = read_flows(flows)?;
            let axis: experiments::SweepAxis = (*axis).into();
            io.note(format_args!("sweeping {} over {values:?}", axis.name()));
            let rows = experiments::run_sweep(&flows, axis, values, &cfg, proportion(g), &seeds(g, &cfg))?;
            emit(io, g.out.as_deref(), |w| experiments::write_table_csv(w, axis.name(), &rows))
        }
        Command::Imbalance {
            flows,
            proportions,
            curves,
            train,
        } => {
            let cfg = resolve_config(g, train)?;
            let flows = read_flows(flows)?;
            let (rows, points) = experiments::run_imbalance(&flows, proportions, &cfg, &seeds(g, &cfg))?;
            emit(io, g.out.as_deref(), |w| experiments::write_table_csv(w, "proportion", &rows))?;
            let curves = curves.clone().or_else(|| g.out.as_ref().map(|o| sibling(o, "curves.csv")));
            emit(io, curves.as_deref(), |w| experiments::write_curves_csv(w, &points))
        }
        Command::Ablation { flows, train } => {
            let cfg = resolve_config(g, train)?;
            let flows = read_flows(flows)?;
            let rows = experiments::run_ablation(&flows, &cfg, proportion(g), &seeds(g, &cfg))?;
            emit(io, g.out.as_deref(), |w| experiments::write_ablation_csv(w, &rows))
        }
    }
}

fn proportion(g: &GlobalArgs) -> experiments::ProportionSpec {
    g.proportion.unwrap_or_default()
}

fn seeds(g: &GlobalArgs, cfg: &HstfConfig) -> Vec<u64> {
    repeat_seeds(cfg.seed, g.repeats)
}

/// `<path>.<suffix>`, e.g. `model.bin.history.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Defaults, then `--config`, then flags.
fn resolve_config(g: &GlobalArgs, t: &TrainArgs) -> Result<HstfConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::input(path, e))?
        }
        None => HstfConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.packet_size {
        cfg.packet_size = v;
    }
    if let Some(v) = g.flow_size {
        cfg.flow_size = v;
    }
    if let Some(v) = t.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = t.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = t.learning_rate {
        cfg.set_learning_rate(v);
    }
    if t.target_f1.is_some() {
        cfg.target_f1 = t.target_f1;
    }
    if t.no_statistics {
        cfg.statistics_gate = 0.0;
    }
    HstfModel::new(cfg.clone())?;
    Ok(cfg)
}

fn read_flows(path: &Path) -> Result<Vec<Flow>, CliError> {
    crate::http::read_ndjson_file(path).map_err(|e| CliError::input(path, e))
}

fn open_out(path: Option<&Path>) -> Result<Option<BufWriter<File>>, CliError> {
    path.map(|p| File::create(p).map(BufWriter::new).map_err(|e| CliError::output(Some(p), e)))
        .transpose()
}

/// Runs `write` against `path`, or stdout when there is none.
fn emit<F>(io: &mut Io, path: Option<&Path>, write: F) -> CliResult
where
    F: FnOnce(&mut dyn Write) -> Result<(), ExperimentError>,
{
    let result = match open_out(path)? {
        Some(mut f) => write(&mut f).and_then(|_| f.flush().map_err(ExperimentError::from)),
        None => write(&mut *io.stdout),
    };
    result.map_err(|e| CliError::output(path, e))
}

fn write_flows(io: &mut Io, path: Option<&Path>, flows: &[Flow]) -> CliResult {
    let result = match open_out(path)? {
        Some(f) => crate::http::write_ndjson(f, flows),
        None => crate::http::write_ndjson(&mut *io.stdout, flows),
    };
    result.map_err(|e: HttpError| CliError::output(path, e))
}

fn cmd_ingest(g: &GlobalArgs, io: &mut Io, pcap: &Path, label: Label, mask: bool) -> CliResult {
    let (streams, decode) = streams_from_capture(pcap).map_err(|e| CliError::input(pcap, e))?;
    let mask_cfg = MaskConfig::default();
    let mut flows = Vec::new();
    let (mut lossy, mut non_http, mut empty, mut malformed) = (0, 0, 0, 0);
    for stream in &streams {
        let (_, report) = parse_messages_with_report(stream);
        non_http += report.non_http;
        malformed += report.malformed + report.abandoned;
        match build_flow(stream, label) {
            Ok(flow) => {
                lossy += usize::from(flow.lossy);
                flows.push(if mask { mask_flow(&flow, &mask_cfg) } else { flow });
            }
            Err(_) => empty += 1,
        }
    }
    write_flows(io, g.out.as_deref(), &flows)?;
    io.note(format_args!(
        "{} packets, {} connections, {} flows ({lossy} lossy); skipped {empty} connections without HTTP messages, \
         {non_http} non-HTTP directions, {malformed} malformed messages, {} non-TCP/IPv6/fragment packets, {} bad frames",
        decode.packets,
        streams.len(),
        flows.len(),
        decode.not_ip + decode.ipv6 + decode.not_tcp + decode.fragments,
        decode.malformed,
    ));
    Ok(())
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    profile_sha256: String,
    benign: usize,
    malicious: usize,
    mean_message_bytes: f64,
    mean_flow_messages: f64,
    flows: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    flow_id: String,
    label: Label,
    messages: usize,
}

fn cmd_gen(
    g: &GlobalArgs,
    io: &mut Io,
    benign: usize,
    malicious: usize,
    profiles: Option<&Path>,
    pcap: Option<&Path>,
    manifest: Option<&Path>,
) -> CliResult {
    let seed = g.seed.unwrap_or(0);
    let profiles = match profiles {
        Some(p) => GeneratorProfiles::load(p).map_err(|e| CliError::new(2, e.to_string()))?,
        None => GeneratorProfiles::default(),
    };
    let flows = generate_corpus(&profiles, benign, malicious, seed).map_err(|e| CliError::new(2, e.to_string()))?;
    write_flows(io, g.out.as_deref(), &flows)?;
    let stats = corpus_stats(&flows);
    let doc = Manifest {
        seed,
        profile_sha256: profiles.hash(),
        benign,
        malicious,
        mean_message_bytes: stats.mean_message_bytes,
        mean_flow_messages: stats.mean_flow_messages,
        flows: flows
            .iter()
            .map(|f| ManifestEntry {
                flow_id: f.flow_id.clone(),
                label: f.label,
                messages: f.messages.len(),
            })
            .collect(),
    };
    let manifest = manifest
        .map(Path::to_path_buf)
        .or_else(|| g.out.as_ref().map(|o| sibling(o, "manifest.json")));
    if let Some(path) = &manifest {
        let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::output(Some(path), e))?;
    }
    if let Some(path) = pcap {
        write_corpus_pcap(path, &flows, &SynthOptions::default(), seed).map_err(|e| CliError::output(Some(path), e))?;
    }
    io.note(format_args!(
        "{} flows, {} messages, mean message {:.3} bytes, mean flow {:.3} messages",
        stats.flows, stats.messages, stats.mean_message_bytes, stats.mean_flow_messages
    ));
    Ok(())
}

fn required_out(g: &GlobalArgs, what: &str) -> Result<PathBuf, CliError> {
    g.out
        .clone()
        .ok_or_else(|| CliError::new(1, format!("--out is required to write {what}")))
}

fn cmd_extract(g: &GlobalArgs, io: &mut Io, flows: &Path) -> CliResult {
    let out = required_out(g, "the encoded dataset")?;
    let cfg = resolve_config(g, &TrainArgs::default())?;
    let flows = read_flows(flows)?;
    let encoded = encode_all(&flows, cfg.packet_size, cfg.flow_size)?;
    write_encoded_dataset_file(&out, cfg.flow_size, &encoded).map_err(|e| CliError::output(Some(&out), e))?;
    io.note(format_args!(
        "{} flows encoded at packet size {} / flow size {}",
        encoded.len(),
        cfg.packet_size,
        cfg.flow_size
    ));
    Ok(())
}

fn cmd_train(g: &GlobalArgs, io: &mut Io, flows: &Path, t: &TrainArgs) -> CliResult {
    let out = required_out(g, "the model")?;
    let cfg = resolve_config(g, t)?;
    let flows = read_flows(flows)?;
    let labels: Vec<Label> = flows.iter().map(|f| f.label).collect();
    if !labels.contains(&Label::Benign) || !labels.contains(&Label::Malicious) {
        return Err(ModelError::SingleClassDataset.into());
    }
    let encoded = encode_all(&flows, cfg.packet_size, cfg.flow_size)?;
    let split = split_indices(&labels, proportion(g), cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| encoded[i].clone()).collect::<Vec<_>>();
    let (train_set, test_set) = (pick(&split.train), pick(&split.test));
    io.note(format_args!(
        "training on {} flows ({}), testing on {}",
        train_set.len(),
        proportion(g),
        test_set.len()
    ));
    let (model, history) = model::train(&train_set, &cfg, cfg.target_f1.map(|_| test_set.as_slice()))?;
    save_model(&model, &out).map_err(|e| CliError::output(Some(&out), e))?;
    let history_path = sibling(&out, "history.csv");
    let file = File::create(&history_path).map_err(|e| CliError::output(Some(&history_path), e))?;
    experiments::write_history_csv(BufWriter::new(file), &history)
        .map_err(|e| CliError::output(Some(&history_path), e))?;
    let m = evaluate(&model, &test_set)?;
    writeln!(
        io.stdout,
        "epochs={} precision={:.4} recall={:.4} f1={:.4}",
        history.epochs.len(),
        m.precision,
        m.recall,
        m.f1
    )
    .map_err(|e| CliError::output(None, e))?;
    Ok(())
}

/// Loads a model and checks it against explicit size flags.
fn load_checked(g: &GlobalArgs, path: &Path) -> Result<HstfModel, CliError> {
    let model = load_model(path).map_err(|e| match e {
        ModelError::VersionMismatch { .. } => CliError::new(5, format!("{}: {e}", path.display())),
        e => CliError::input(path, e),
    })?;
    for (flag, want, have) in [
        ("--packet-size", g.packet_size, model.config.packet_size),
        ("--flow-size", g.flow_size, model.config.flow_size),
    ] {
        if want.is_some_and(|w| w != have) {
            return Err(CliError::new(
                5,
                format!("{flag} {} does not match the model's {have}", want.unwrap_or_default()),
            ));
        }
    }
    Ok(model)
}

fn check_threshold(threshold: f64) -> CliResult {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(CliError::new(1, format!("threshold {threshold} outside [0, 1]")))
    }
}

fn cmd_eval(g: &GlobalArgs, io: &mut Io, model: &Path, flows: &Path, threshold: f64) -> CliResult {
    check_threshold(threshold)?;
    let model = load_checked(g, model)?;
    let flows = read_flows(flows)?;
    let encoded = encode_all(&flows, model.config.packet_size, model.config.flow_size)?;
    let scores = model.scores(&encoded)?;
    let (mut preds, mut truth) = (Vec::new(), Vec::new());
    for (s, f) in scores.iter().zip(&flows) {
        if let Some(t) = f.label.target() {
            preds.push(*s >= threshold);
            truth.push(t == 1.0);
        }
    }
    if truth.is_empty() {
        return Err(CliError::new(1, "no labeled flows to evaluate"));
    }
    let m = experiments::compute_metrics(&preds, &truth)?;
    emit(io, g.out.as_deref(), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["flows", "tp", "fp", "tn", "fn", "precision", "recall", "f1"])?;
        out.write_record([
            m.total().to_string(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.tn.to_string(),
            m.fn_.to_string(),
            format!("{:.4}", m.precision),
            format!("{:.4}", m.recall),
            format!("{:.4}", m.f1),
        ])?;
        out.flush()?;
        Ok(())
    })
}

fn cmd_predict(g: &GlobalArgs, io: &mut Io, model: &Path, flows: &Path, threshold: f64) -> CliResult {
    check_threshold(threshold)?;
    let model = load_checked(g, model)?;
    let flows = read_flows(flows)?;
    let mut rows = Vec::with_capacity(flows.len());
    for f in &flows {
        let p = model::predict(f, &model, threshold)?;
        rows.push((f.flow_id.clone(), p));
    }
    emit(io, g.out.as_deref(), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["flow_id", "label", "score"])?;
        for (id, p) in &rows {
            out.write_record([id.clone(), p.label.as_str().to_string(), format!("{:.6}", p.score)])?;
        }
        out.flush()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(std::iter::once("hstf").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_unknown_flags() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("imbalance"));
        assert_eq!(run_capture(&["train", "--help"]).0, 0);
        assert_eq!(run_capture(&["train", "x.ndjson", "--bogus"]).0, 1);
        assert_eq!(run_capture(&[]).0, 1);
        assert_eq!(run_capture(&["--proportion", "3-10", "train", "x"]).0, 1);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"packet_size": 200, "flow_size": 6, "seed": 9}"#).unwrap();
        let cli = Cli::try_parse_from(["hstf", "--config", path.to_str().unwrap(), "--flow-size", "2", "extract", "f"])
            .unwrap();
        let cfg = resolve_config(&cli.global, &TrainArgs::default()).unwrap();
        assert_eq!((cfg.packet_size, cfg.flow_size, cfg.seed), (200, 2, 9));
        let cli = Cli::try_parse_from(["hstf", "extract", "f"]).unwrap();
        assert_eq!(resolve_config(&cli.global, &TrainArgs::default()).unwrap(), HstfConfig::default());
    }

    #[test]
    fn missing_inputs_exit_2() {
        let (code, _, err) = run_capture(&["ingest", "/nonexistent/x.pcap"]);
        assert_eq!(code, 2, "{err}");
        assert_eq!(run_capture(&["eval", "/nonexistent/m", "/nonexistent/f"]).0, 2);
        assert_eq!(run_capture(&["gen", "--profiles", "/nonexistent/p.json"]).0, 2);
    }
}
