use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Flow, OriginalLengths};

/// Pseudo header name selecting the URL path for masking.
pub const URL_PATH_FIELD: &str = ":path";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Lower-case header names, plus [`URL_PATH_FIELD`] for the URL path.
    pub fields_to_mask: BTreeSet<String>,
    pub hash_output_length: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            fields_to_mask: ["host", "cookie", "authorization", "referer", URL_PATH_FIELD]
                .into_iter()
                .map(String::from)
                .collect(),
            hash_output_length: 16,
        }
    }
}

impl MaskConfig {
    pub fn none() -> Self {
        Self {
            fields_to_mask: BTreeSet::new(),
            hash_output_length: 16,
        }
    }

    fn covers(&self, name: &str) -> bool {
        self.fields_to_mask.contains(&name.to_ascii_lowercase())
    }
}

/// SHA-256 over `lowercase(name) || 0x00 || value`, hex encoded and cut to
/// `len` characters (at most 64).
pub fn mask_value(name: &str, value: &str, len: usize) -> String {
    let mut h = Sha256::new();
    h.update(name.to_ascii_lowercase().as_bytes());
    h.update([0u8]);
    h.update(value.as_bytes());
    let mut digest = hex::encode(h.finalize());
    digest.truncate(len.min(64));
    digest
}

/// Replaces configured header values (and the URL path) with digests. Lengths
/// are recorded first so features are unaffected.
pub fn mask_flow(flow: &Flow, cfg: &MaskConfig) -> Flow {
    let mut out = flow.clone();
    if cfg.fields_to_mask.is_empty() {
        return out;
    }
    for msg in &mut out.messages {
        let lengths = OriginalLengths {
            url_len: msg.url_len(),
            value_lens: (0..msg.headers.len())
                .map(|i| msg.header_value_len(i))
                .collect(),
        };
        let mut changed = false;
        for (name, value) in &mut msg.headers {
            if cfg.covers(name) {
                *value = mask_value(name, value, cfg.hash_output_length);
                changed = true;
            }
        }
        if cfg.covers(URL_PATH_FIELD) {
            if let Some(url) = msg.url.as_mut() {
                let split = url.find('?').unwrap_or(url.len());
                let (path, query) = url.split_at(split);
                if !path.is_empty() {
                    *url = format!(
                        "/{}{}",
                        mask_value(URL_PATH_FIELD, path, cfg.hash_output_length),
                        query
                    );
                    changed = true;
                }
            }
        }
        if changed && msg.masked.is_none() {
            msg.masked = Some(lengths);
        }
    }
    out
}
