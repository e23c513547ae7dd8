//! Model file. Little-endian:
//!
//! ```text
//! magic          4 bytes  "HSTF"
//! format_version u32
//! config_len     u32, then config as JSON
//! stats          4 × (len u32, len × f64): pl_min, pl_max, fl_min, fl_max
//! tensor_count   u32
//! tensor         name_len u16, name, ndim u8, ndim × u32 dims, f64 data
//! crc32          u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{HstfConfig, HstfModel, ModelError};
use crate::features::NormalizationStats;
use crate::nn::Parameterized;

const MAGIC: &[u8; 4] = b"HSTF";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    put_u32(out, values.len() as u32);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_model(model: &HstfModel) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, MODEL_FORMAT_VERSION);
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    let s = &model.stats;
    for v in [&s.pl_min, &s.pl_max, &s.fl_min, &s.fl_max] {
        put_f64s(&mut out, v);
    }
    let named = model.params.named();
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn save_model(model: &HstfModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, write_model(model)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::CorruptFile("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, ModelError> {
        let n = self.u32()? as usize;
        Ok(self
            .take(n.checked_mul(8).ok_or_else(|| ModelError::CorruptFile("length overflow".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_model(bytes: &[u8]) -> Result<HstfModel, ModelError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(ModelError::CorruptFile("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(ModelError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let config_len = r.u32()? as usize;
    let config: HstfConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| ModelError::CorruptFile(format!("config: {e}")))?;
    let stats = NormalizationStats {
        pl_min: r.f64s()?,
        pl_max: r.f64s()?,
        fl_min: r.f64s()?,
        fl_max: r.f64s()?,
    };
    let mut model = HstfModel::new(config)?;
    let unit = NormalizationStats::unit();
    if stats.pl_min.len() != unit.pl_min.len()
        || stats.pl_max.len() != unit.pl_max.len()
        || stats.fl_min.len() != unit.fl_min.len()
        || stats.fl_max.len() != unit.fl_max.len()
    {
        return Err(ModelError::CorruptFile("normalization stats have wrong length".into()));
    }
    model.stats = stats;
    let count = r.u32()? as usize;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if count != expected.len() {
        return Err(ModelError::CorruptFile(format!(
            "{count} tensors, configuration implies {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let found = r.take(name_len)?;
        if found != name.as_bytes() {
            return Err(ModelError::CorruptFile(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(found)
            )));
        }
        let ndim = r.take(1)?[0] as usize;
        let dims = (0..ndim).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>, ModelError>>()?;
        if &dims != shape {
            return Err(ModelError::CorruptFile(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
        }
        let n: usize = dims.iter().product();
        let data: Vec<f64> = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        loaded.push(data);
    }
    if r.pos != body.len() {
        return Err(ModelError::CorruptFile("trailing bytes".into()));
    }
    let mut it = loaded.into_iter();
    model.params.visit_params_mut(&mut |_, t| {
        t.data_mut().copy_from_slice(&it.next().expect("counted"));
    });
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HstfModel, ModelError> {
    read_model(&fs::read(path)?)
}
