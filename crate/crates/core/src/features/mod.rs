//! Model inputs: the raw field-line matrix per message, PL per message and FL
//! per flow.

mod dataset;
mod encode;
mod raw;
mod stats;

pub use dataset::{
    read_encoded_dataset, read_encoded_dataset_file, write_encoded_dataset,
    write_encoded_dataset_file, DATASET_VERSION,
};
pub use encode::{
    check_sizes, encode_flow, normalize_features, normalize_in_place, EncodedFlow,
    NormalizationStats,
};
pub use raw::{encode_field_line, encode_packet_raw, field_lines, RawFeatureMatrix};
pub use stats::{build_fl, build_pl, request_type_code, FlowLevelVector, PacketLevelVector};

pub const MATRIX_ROWS: usize = 47;
pub const MATRIX_COLS: usize = 200;
pub const PL_LEN: usize = 100;
pub const FL_LEN: usize = 170;
/// Header slots in PL.
pub const MAX_HEADERS: usize = 47;
/// Messages considered by FL.
pub const MAX_FLOW_PACKETS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no flows to compute normalization statistics from")]
    EmptyTrainingSet,
    #[error("dataset format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
