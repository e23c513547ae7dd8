//! Hand-crafted packet-level (PL) and flow-level (FL) statistics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{FL_LEN, MAX_FLOW_PACKETS, MAX_HEADERS, PL_LEN};
use crate::http::{char_len, Flow, HttpMessage, MessageKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketLevelVector(Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLevelVector(Vec<f64>);

macro_rules! fixed_vector {
    ($t:ident, $len:expr) => {
        impl $t {
            pub const LEN: usize = $len;

            pub fn zeros() -> Self {
                Self(vec![0.0; $len])
            }

            pub fn from_values(values: Vec<f64>) -> Option<Self> {
                (values.len() == $len).then_some(Self(values))
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            /// 1-indexed access, matching the documented layout.
            pub fn at(&self, position: usize) -> f64 {
                self.0[position - 1]
            }
        }
    };
}

fixed_vector!(PacketLevelVector, PL_LEN);
fixed_vector!(FlowLevelVector, FL_LEN);

/// Request type codes used in PL position 1.
pub fn request_type_code(msg: &HttpMessage) -> f64 {
    match msg.kind {
        MessageKind::Response => 5.0,
        MessageKind::Request => match msg.method.as_deref() {
            Some("GET") => 1.0,
            Some("POST") => 2.0,
            Some("HEAD") => 3.0,
            _ => 4.0,
        },
    }
}

/// `build_pl(msg)`.
pub fn build_pl(msg: &HttpMessage) -> PacketLevelVector {
    let mut v = vec![0.0; PL_LEN];
    v[0] = request_type_code(msg);
    v[1] = f64::from(msg.src_port);
    v[2] = f64::from(msg.dst_port);
    v[3] = msg.url_len() as f64;
    v[4] = msg.version.as_f64();
    for (i, (name, _)) in msg.headers.iter().take(MAX_HEADERS).enumerate() {
        v[5 + i] = char_len(name) as f64;
        v[5 + MAX_HEADERS + i] = msg.header_value_len(i) as f64;
    }
    v[PL_LEN - 1] = msg.body_len as f64;
    PacketLevelVector(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum SameKey<'a> {
    Request(Option<&'a str>, Option<&'a str>),
    Response(Option<u16>),
}

fn same_key(m: &HttpMessage) -> SameKey<'_> {
    match m.kind {
        MessageKind::Request => SameKey::Request(m.method.as_deref(), m.url.as_deref()),
        MessageKind::Response => SameKey::Response(m.status_code),
    }
}

/// Fraction `part / whole`, 0 when `whole` is 0.
fn ratio(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// `(same, different)` fractions of the `kind` messages: a message counts as
/// "same" when its key occurs at least twice among messages of its kind.
fn same_different(msgs: &[HttpMessage], kind: MessageKind) -> (f64, f64) {
    let mut counts: HashMap<SameKey<'_>, usize> = HashMap::new();
    let of_kind: Vec<&HttpMessage> = msgs.iter().filter(|m| m.kind == kind).collect();
    for m in &of_kind {
        *counts.entry(same_key(m)).or_default() += 1;
    }
    let same = of_kind.iter().filter(|m| counts[&same_key(m)] >= 2).count();
    let n = of_kind.len();
    if n == 0 {
        (0.0, 0.0)
    } else {
        (ratio(same, n), ratio(n - same, n))
    }
}

/// Whether some run of at least two consecutive `kind` messages is directly
/// followed (requests) or preceded (responses) by the opposite kind.
fn has_multi_run(msgs: &[HttpMessage], kind: MessageKind) -> bool {
    let kinds: Vec<MessageKind> = msgs.iter().map(|m| m.kind).collect();
    let mut run = 0;
    for (i, &k) in kinds.iter().enumerate() {
        if k == kind {
            run += 1;
            continue;
        }
        if run >= 2 {
            match kind {
                // requests ... then a response
                MessageKind::Request => return true,
                // a request, responses ... : the run must follow a request
                MessageKind::Response => {
                    if i > run && kinds[i - run - 1] == MessageKind::Request {
                        return true;
                    }
                }
            }
        }
        run = 0;
    }
    kind == MessageKind::Response && run >= 2 && kinds.len() > run
}

/// `build_fl(flow)`: statistics over the first [`MAX_FLOW_PACKETS`] messages.
pub fn build_fl(flow: &Flow) -> FlowLevelVector {
    let msgs = &flow.messages[..flow.messages.len().min(MAX_FLOW_PACKETS)];
    let n = msgs.len();
    let mut v = vec![0.0; FL_LEN];
    if n == 0 {
        return FlowLevelVector(v);
    }
    let requests: Vec<&HttpMessage> = msgs.iter().filter(|m| m.is_request()).collect();
    let responses: Vec<&HttpMessage> = msgs.iter().filter(|m| !m.is_request()).collect();
    v[0] = n as f64;
    v[1] = ratio(requests.len(), n);
    v[2] = ratio(responses.len(), n);
    (v[3], v[4]) = same_different(msgs, MessageKind::Request);
    (v[5], v[6]) = same_different(msgs, MessageKind::Response);
    for (i, m) in msgs.iter().enumerate() {
        v[7 + i] = f64::from(m.ttl);
        v[109 + i] = m.wire_length as f64;
    }
    for (i, pair) in msgs.windows(2).enumerate() {
        let dt = pair[1].timestamp.as_micros().saturating_sub(pair[0].timestamp.as_micros());
        v[57 + i] = dt as f64 / 1e6;
    }
    let total: usize = msgs.iter().map(|m| m.wire_length).sum();
    let req_bytes: usize = requests.iter().map(|m| m.wire_length).sum();
    v[106] = total as f64;
    v[107] = ratio(req_bytes, total);
    v[108] = if total == 0 {
        0.0
    } else {
        ratio(total - req_bytes, total)
    };
    v[159] = f64::from(u8::from(has_multi_run(msgs, MessageKind::Request)));
    v[160] = f64::from(u8::from(has_multi_run(msgs, MessageKind::Response)));
    let method_counts = requests.iter().fold([0usize; 4], |mut acc, m| {
        let slot = match m.method.as_deref() {
            Some("GET") => 0,
            Some("POST") => 1,
            Some("HEAD") => 2,
            _ => 3,
        };
        acc[slot] += 1;
        acc
    });
    for (k, c) in method_counts.iter().enumerate() {
        v[161 + k] = ratio(*c, requests.len());
    }
    let status_counts = responses.iter().fold([0usize; 4], |mut acc, m| {
        let slot = match m.status_code.unwrap_or(0) / 100 {
            2 => 0,
            4 => 1,
            5 => 2,
            _ => 3,
        };
        acc[slot] += 1;
        acc
    });
    for (k, c) in status_counts.iter().enumerate() {
        v[165 + k] = ratio(*c, responses.len());
    }
    let all_messages = flow.messages.len();
    let segments = flow.segments.unwrap_or(all_messages).max(all_messages);
    v[169] = ratio(all_messages, segments);
    FlowLevelVector(v)
}
