//! Raw field-line encoding of single messages.

use serde::{Deserialize, Serialize};

use super::{MATRIX_COLS, MATRIX_ROWS};
use crate::http::{serialize_head, HttpMessage};

/// `encode_field_line(line)`: bytes scaled to [0,1], truncated or zero-padded
/// to [`MATRIX_COLS`] values.
pub fn encode_field_line(line: &[u8]) -> Vec<f64> {
    let mut row = vec![0.0; MATRIX_COLS];
    for (slot, &b) in row.iter_mut().zip(line) {
        *slot = f64::from(b) / 255.0;
    }
    row
}

/// A [`MATRIX_ROWS`]×[`MATRIX_COLS`] matrix stored as its non-zero rows of
/// raw bytes; entry (r, c) is `lines[r][c] / 255`, zero beyond the stored
/// bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFeatureMatrix {
    lines: Vec<Vec<u8>>,
}

impl RawFeatureMatrix {
    pub const ROWS: usize = MATRIX_ROWS;
    pub const COLS: usize = MATRIX_COLS;

    pub fn zeros() -> Self {
        Self::default()
    }

    /// Keeps at most [`MATRIX_ROWS`] lines of at most [`MATRIX_COLS`] bytes.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a [u8]>) -> Self {
        Self {
            lines: lines
                .into_iter()
                .take(MATRIX_ROWS)
                .map(|l| l[..l.len().min(MATRIX_COLS)].to_vec())
                .collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (MATRIX_ROWS, MATRIX_COLS)
    }

    pub fn lines(&self) -> &[Vec<u8>] {
        &self.lines
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < MATRIX_ROWS && col < MATRIX_COLS, "index out of range");
        self.lines
            .get(row)
            .and_then(|l| l.get(col))
            .map_or(0.0, |&b| f64::from(b) / 255.0)
    }

    /// Rows that may hold non-zero values.
    pub fn active_rows(&self) -> usize {
        self.lines.len()
    }

    /// Columns that may hold non-zero values.
    pub fn active_cols(&self) -> usize {
        self.lines.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Row-major values of the top-left `rows`×`cols` block.
    pub fn to_dense_block(&self, rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for (r, line) in self.lines.iter().take(rows).enumerate() {
            for (c, &b) in line.iter().take(cols).enumerate() {
                out[r * cols + c] = f64::from(b) / 255.0;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.to_dense_block(MATRIX_ROWS, MATRIX_COLS)
    }
}

/// Splits the serialized message, cut to `packet_size` bytes, into field
/// lines: start line, header lines, then whatever body remains as one line.
pub fn field_lines(msg: &HttpMessage, packet_size: usize) -> Vec<Vec<u8>> {
    let head = serialize_head(msg);
    let head_len = head.len();
    let mut bytes = head;
    bytes.extend_from_slice(&msg.body);
    bytes.truncate(packet_size);
    let head_part = &bytes[..head_len.min(bytes.len())];
    let mut lines = Vec::new();
    let mut rest = head_part;
    while !rest.is_empty() {
        let (line, next) = match rest.windows(2).position(|w| w == b"\r\n") {
            Some(p) => (&rest[..p], &rest[p + 2..]),
            None => (rest.strip_suffix(b"\r").unwrap_or(rest), &rest[rest.len()..]),
        };
        if !line.is_empty() {
            lines.push(line.to_vec());
        }
        rest = next;
    }
    if bytes.len() > head_len {
        lines.push(bytes[head_len..].to_vec());
    }
    lines
}

/// `encode_packet_raw(msg, packet_size)`.
pub fn encode_packet_raw(msg: &HttpMessage, packet_size: usize) -> RawFeatureMatrix {
    let lines = field_lines(msg, packet_size);
    RawFeatureMatrix::from_lines(lines.iter().map(Vec::as_slice))
}
