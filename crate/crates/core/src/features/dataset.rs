//! Binary file of encoded flows.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "HSTFENC\0"
//! version    u32      = 1
//! flow_size  u32
//! rows, cols u32 u32  = 47, 200
//! pl_len     u32      = 100
//! fl_len     u32      = 170
//! count      u64
//! count × record:
//!   label        u8   (0 benign, 1 malicious, 2 unlabeled)
//!   real_packets u32
//!   flow_size × matrix: n_lines u8, then n_lines × (len u8, len bytes)
//!   flow_size × pl_len f32
//!   fl_len f32
//! ```
//!
//! Matrix entries are `byte / 255`, so storing the bytes is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{
    EncodedFlow, FeatureError, FlowLevelVector, PacketLevelVector, RawFeatureMatrix, FL_LEN,
    MATRIX_COLS, MATRIX_ROWS, PL_LEN,
};
use crate::http::Label;

const MAGIC: &[u8; 8] = b"HSTFENC\0";
pub const DATASET_VERSION: u32 = 1;

fn label_code(l: Label) -> u8 {
    match l {
        Label::Benign => 0,
        Label::Malicious => 1,
        Label::Unlabeled => 2,
    }
}

pub fn write_encoded_dataset<W: Write>(
    mut w: W,
    flow_size: usize,
    flows: &[EncodedFlow],
) -> Result<(), FeatureError> {
    w.write_all(MAGIC)?;
    for v in [
        DATASET_VERSION,
        flow_size as u32,
        MATRIX_ROWS as u32,
        MATRIX_COLS as u32,
        PL_LEN as u32,
        FL_LEN as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(flows.len() as u64).to_le_bytes())?;
    for f in flows {
        if f.flow_size() != flow_size || f.pls.len() != flow_size {
            return Err(FeatureError::Format(format!(
                "flow has {} slots, file declares {flow_size}",
                f.flow_size()
            )));
        }
        w.write_all(&[label_code(f.label)])?;
        w.write_all(&(f.real_packets as u32).to_le_bytes())?;
        for m in &f.matrices {
            w.write_all(&[m.lines().len() as u8])?;
            for line in m.lines() {
                w.write_all(&[line.len() as u8])?;
                w.write_all(line)?;
            }
        }
        for pl in &f.pls {
            for &v in pl.values() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        for &v in f.fl.values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, FeatureError> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| FeatureError::Format("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, FeatureError> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, FeatureError> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, FeatureError> {
        let b = self.bytes(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }
}

/// Returns the declared flow size and the flows.
pub fn read_encoded_dataset<R: Read>(r: R) -> Result<(usize, Vec<EncodedFlow>), FeatureError> {
    let mut c = Cursor { inner: r };
    if c.bytes(8)? != MAGIC {
        return Err(FeatureError::Format("not an encoded dataset file".into()));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(FeatureError::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let flow_size = c.u32()? as usize;
    let shape = [c.u32()?, c.u32()?, c.u32()?, c.u32()?];
    if shape != [MATRIX_ROWS as u32, MATRIX_COLS as u32, PL_LEN as u32, FL_LEN as u32] {
        return Err(FeatureError::Format(format!("unexpected shapes {shape:?}")));
    }
    let count = c.u64()?;
    let mut flows = Vec::new();
    for _ in 0..count {
        let label = match c.u8()? {
            0 => Label::Benign,
            1 => Label::Malicious,
            2 => Label::Unlabeled,
            x => return Err(FeatureError::Format(format!("label code {x}"))),
        };
        let real_packets = c.u32()? as usize;
        if real_packets > flow_size {
            return Err(FeatureError::Format("real packets exceed flow size".into()));
        }
        let mut matrices = Vec::with_capacity(flow_size);
        for _ in 0..flow_size {
            let n = c.u8()? as usize;
            let mut lines = Vec::with_capacity(n);
            for _ in 0..n {
                let len = c.u8()? as usize;
                lines.push(c.bytes(len)?);
            }
            if n > MATRIX_ROWS || lines.iter().any(|l| l.len() > MATRIX_COLS) {
                return Err(FeatureError::Format("matrix exceeds 47x200".into()));
            }
            matrices.push(RawFeatureMatrix::from_lines(lines.iter().map(Vec::as_slice)));
        }
        let mut pls = Vec::with_capacity(flow_size);
        for _ in 0..flow_size {
            pls.push(PacketLevelVector::from_values(c.f32s(PL_LEN)?).expect("length"));
        }
        let fl = FlowLevelVector::from_values(c.f32s(FL_LEN)?).expect("length");
        flows.push(EncodedFlow {
            matrices,
            pls,
            fl,
            label,
            real_packets,
        });
    }
    Ok((flow_size, flows))
}

pub fn write_encoded_dataset_file(
    path: impl AsRef<Path>,
    flow_size: usize,
    flows: &[EncodedFlow],
) -> Result<(), FeatureError> {
    write_encoded_dataset(BufWriter::new(File::create(path)?), flow_size, flows)
}

pub fn read_encoded_dataset_file(
    path: impl AsRef<Path>,
) -> Result<(usize, Vec<EncodedFlow>), FeatureError> {
    read_encoded_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::encode_flow;
    use crate::http::{Flow, HttpMessage, HttpVersion};

    #[test]
    fn round_trip_preserves_matrices_and_f32_values() {
        let mut m = HttpMessage::request("GET", "/q?a=1", HttpVersion::V1_1);
        m.headers = vec![("Host".into(), "h".into())];
        m.wire_length = 40;
        let flow = Flow {
            flow_id: "a".into(),
            label: Label::Malicious,
            lossy: false,
            segments: None,
            messages: vec![m.clone(), HttpMessage::response(200, HttpVersion::V1_1)],
        };
        let e = encode_flow(&flow, 400, 3).unwrap();
        let mut buf = Vec::new();
        write_encoded_dataset(&mut buf, 3, std::slice::from_ref(&e)).unwrap();
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        let (fs, back) = read_encoded_dataset(&buf[..]).unwrap();
        assert_eq!(fs, 3);
        assert_eq!(back[0].matrices, e.matrices);
        assert_eq!(back[0].label, Label::Malicious);
        assert_eq!(back[0].real_packets, 2);
        for (a, b) in back[0].pls.iter().zip(&e.pls) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(
            read_encoded_dataset(&bad[..]),
            Err(FeatureError::VersionMismatch { found: 9, .. })
        ));
        assert!(read_encoded_dataset(&buf[..buf.len() - 1]).is_err());
    }
}
