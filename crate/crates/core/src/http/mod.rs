//! HTTP/1.x messages and flows: parsing reassembled streams, privacy masking,
//! and the NDJSON interchange format.

mod mask;
mod ndjson;
mod parse;

use serde::{Deserialize, Serialize};

use crate::capture::Timestamp;

pub use mask::{mask_flow, mask_value, MaskConfig, URL_PATH_FIELD};
pub use ndjson::{read_ndjson, read_ndjson_file, write_ndjson, write_ndjson_file};
pub use parse::{
    build_flow, parse_messages, parse_messages_with_report, serialize_head, serialize_message,
    ParseReport, MAX_HEADER_SECTION, MAX_LINE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HttpVersion {
    #[serde(rename = "0.9")]
    V0_9,
    #[serde(rename = "1.0")]
    V1_0,
    #[serde(rename = "1.1")]
    V1_1,
}

impl HttpVersion {
    pub fn as_f64(self) -> f64 {
        match self {
            HttpVersion::V0_9 => 0.9,
            HttpVersion::V1_0 => 1.0,
            HttpVersion::V1_1 => 1.1,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            HttpVersion::V0_9 => "HTTP/0.9",
            HttpVersion::V1_0 => "HTTP/1.0",
            HttpVersion::V1_1 => "HTTP/1.1",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "HTTP/1.1" => Some(HttpVersion::V1_1),
            "HTTP/1.0" => Some(HttpVersion::V1_0),
            "HTTP/0.9" => Some(HttpVersion::V0_9),
            _ => None,
        }
    }
}

/// Lengths measured before masking replaced the url and header values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalLengths {
    pub url_len: usize,
    pub value_lens: Vec<usize>,
}

/// One request or response. Strings hold the wire bytes decoded as Latin-1,
/// so `str::chars().count()` equals the byte length on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpMessage {
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, rename = "status", skip_serializing_if = "Option::is_none")]
    pub status_code: Option<u16>,
    pub version: HttpVersion,
    pub headers: Vec<(String, String)>,
    /// Decoded body bytes; may be empty when only `body_len` is known.
    #[serde(default, with = "base64_bytes", skip_serializing_if = "Vec::is_empty")]
    pub body: Vec<u8>,
    pub body_len: usize,
    pub wire_length: usize,
    pub src_port: u16,
    pub dst_port: u16,
    pub ttl: u8,
    #[serde(rename = "ts", with = "seconds")]
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked: Option<OriginalLengths>,
}

pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}

impl HttpMessage {
    pub fn request(method: &str, url: &str, version: HttpVersion) -> Self {
        Self {
            kind: MessageKind::Request,
            method: Some(method.to_string()),
            url: Some(url.to_string()),
            status_code: None,
            version,
            headers: Vec::new(),
            body: Vec::new(),
            body_len: 0,
            wire_length: 0,
            src_port: 0,
            dst_port: 0,
            ttl: 0,
            timestamp: Timestamp::default(),
            masked: None,
        }
    }

    pub fn response(status: u16, version: HttpVersion) -> Self {
        Self {
            kind: MessageKind::Response,
            method: None,
            url: None,
            status_code: Some(status),
            ..Self::request("", "", version)
        }
    }

    pub fn is_request(&self) -> bool {
        self.kind == MessageKind::Request
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// URL length in bytes as seen on the wire, before any masking.
    pub fn url_len(&self) -> usize {
        match &self.masked {
            Some(m) => m.url_len,
            None => self.url.as_deref().map_or(0, char_len),
        }
    }

    /// Header value lengths as seen on the wire, before any masking.
    pub fn header_value_len(&self, index: usize) -> usize {
        match &self.masked {
            Some(m) => m.value_lens.get(index).copied().unwrap_or(0),
            None => self.headers.get(index).map_or(0, |(_, v)| char_len(v)),
        }
    }

    /// Checks the request/response field invariants.
    pub fn validate(&self) -> Result<(), HttpError> {
        let ok = match self.kind {
            MessageKind::Request => {
                self.method.is_some() && self.url.is_some() && self.status_code.is_none()
            }
            MessageKind::Response => {
                self.method.is_none()
                    && self.status_code.is_some_and(|s| (100..=599).contains(&s))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(HttpError::MalformedMessage(format!(
                "{:?} with inconsistent start-line fields",
                self.kind
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
    Unlabeled,
}

impl Label {
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Benign => Some(0.0),
            Label::Malicious => Some(1.0),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
            Label::Unlabeled => "unlabeled",
        }
    }
}

/// One TCP connection's HTTP messages in capture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub flow_id: String,
    pub label: Label,
    pub lossy: bool,
    /// Payload-carrying TCP segments in the connection, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    pub messages: Vec<HttpMessage>,
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("no HTTP messages in stream")]
    EmptyFlow,
    #[error("ndjson line {line}: {source}")]
    Ndjson {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

/// Timestamps travel as fractional seconds; microseconds survive the trip.
mod seconds {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::capture::Timestamp;

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(t.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() || secs < 0.0 {
            return Err(serde::de::Error::custom("timestamp must be non-negative"));
        }
        Ok(Timestamp::from_micros((secs * 1e6).round() as u64))
    }
}
