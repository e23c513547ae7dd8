use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::experiments::{ProportionSpec, SweepAxis};
use crate::http::Label;

#[derive(Debug, Parser)]
#[command(name = "hstf", version, about = "Detect HTTP Trojan traffic with a CNN+LSTM flow classifier")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// Seed for splits, initialization, shuffling and generation
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat seeds for sweep, imbalance and ablation (seed, seed+1, ...)
    #[arg(long, global = true, default_value_t = 3)]
    pub repeats: usize,
    /// Bytes of each message kept for the raw matrix
    #[arg(long, global = true)]
    pub packet_size: Option<usize>,
    /// Leading messages per flow fed to the model
    #[arg(long, global = true)]
    pub flow_size: Option<usize>,
    /// Malicious:benign training ratio
    #[arg(long, global = true, value_name = "M:B", value_parser = parse_proportion)]
    pub proportion: Option<ProportionSpec>,
    /// Output path; CSV and NDJSON outputs go to stdout when omitted
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// JSON model configuration; flags take precedence over it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress output on stderr
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

fn parse_proportion(s: &str) -> Result<ProportionSpec, String> {
    s.parse().map_err(|e: crate::experiments::ExperimentError| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Benign,
    Malicious,
    Unlabeled,
}

impl From<LabelArg> for Label {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Benign => Label::Benign,
            LabelArg::Malicious => Label::Malicious,
            LabelArg::Unlabeled => Label::Unlabeled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    PacketSize,
    FlowSize,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::PacketSize => SweepAxis::PacketSize,
            AxisArg::FlowSize => SweepAxis::FlowSize,
        }
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Stop once F1 on the held-out split reaches this value
    #[arg(long)]
    pub target_f1: Option<f64>,
    /// Zero the packet- and flow-level statistics branches
    #[arg(long)]
    pub no_statistics: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reassemble HTTP flows from a pcap capture into NDJSON
    Ingest {
        pcap: PathBuf,
        #[arg(long, value_enum, default_value = "unlabeled")]
        label: LabelArg,
        /// Hash sensitive header values and the URL path
        #[arg(long)]
        mask: bool,
    },
    /// Generate a labeled synthetic corpus as NDJSON plus a manifest
    Gen {
        #[arg(long, default_value_t = 8400)]
        benign: usize,
        #[arg(long, default_value_t = 2143)]
        malicious: usize,
        /// Traffic profile JSON; the bundled profiles when omitted
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Also write the corpus as a pcap capture
        #[arg(long)]
        pcap: Option<PathBuf>,
        /// Manifest path; defaults to <out>.manifest.json
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Encode NDJSON flows into a binary feature dataset
    Extract { flows: PathBuf },
    /// Split, train and save a model; writes <out>.history.csv
    Train {
        flows: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score flows with a model and write a metrics CSV
    Eval {
        model: PathBuf,
        flows: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Print flow_id, label and score for each flow
    Predict {
        model: PathBuf,
        flows: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train and evaluate once per value of one size parameter
    Sweep {
        flows: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train and evaluate at several training proportions
    Imbalance {
        flows: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_proportion, default_value = "3:10,1:24")]
        proportions: Vec<ProportionSpec>,
        /// Recall-by-epoch CSV; defaults to <out>.curves.csv or stdout
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train with and without the statistics branches under identical seeds
    Ablation {
        flows: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
}
