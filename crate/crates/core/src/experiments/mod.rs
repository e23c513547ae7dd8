//! Evaluation protocol, synthetic corpus generation and experiment drivers.

mod generator;
mod metrics;
mod runs;
mod split;

pub use generator::{
    corpus_stats, flow_to_segments, flows_to_packets, generate_corpus, write_corpus_pcap, Charset, ClassProfile,
    CorpusStats, FlowEndpoints, GeneratorProfiles, HeaderRule, IntDist, SynthOptions, VariantProfile, Weighted,
    DEFAULT_MSS,
};
pub use metrics::{compute_metrics, f1, f_beta, Metrics};
pub use runs::{
    encode_all, evaluate, repeat_seeds, run_ablation, run_imbalance, run_once, run_sweep, write_ablation_csv,
    write_curves_csv, write_history_csv, write_table_csv, AblationRow, CurvePoint, RunOutcome, SweepAxis, TableRow,
};
pub use split::{make_split, split_indices, Labeled, ProportionSpec, Split, MAX_TEST_BENIGN};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("bad generator profile: {0}")]
    BadProfile(String),
    #[error("cannot synthesize flow: {0}")]
    BadFlow(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("bad proportion {0:?}, expected m:b with positive integers")]
    BadProportion(String),
    #[error("{0}")]
    BadArgument(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
