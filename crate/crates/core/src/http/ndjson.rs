//! One JSON-encoded [`Flow`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Flow, HttpError};

pub fn write_ndjson<'a, W: Write>(
    mut w: W,
    flows: impl IntoIterator<Item = &'a Flow>,
) -> Result<(), HttpError> {
    for flow in flows {
        serde_json::to_writer(&mut w, flow).map_err(|e| HttpError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are ignored.
pub fn read_ndjson<R: BufRead>(r: R) -> Result<Vec<Flow>, HttpError> {
    let mut flows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let flow: Flow = serde_json::from_str(&line).map_err(|source| HttpError::Ndjson {
            line: idx + 1,
            source,
        })?;
        flows.push(flow);
    }
    Ok(flows)
}

pub fn read_ndjson_file(path: impl AsRef<Path>) -> Result<Vec<Flow>, HttpError> {
    read_ndjson(BufReader::new(File::open(path)?))
}

pub fn write_ndjson_file<'a>(
    path: impl AsRef<Path>,
    flows: impl IntoIterator<Item = &'a Flow>,
) -> Result<(), HttpError> {
    write_ndjson(BufWriter::new(File::create(path)?), flows)
}
